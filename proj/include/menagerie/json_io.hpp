#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "menagerie/matching.hpp"
#include "menagerie/scene.hpp"
#include "menagerie/types.hpp"

namespace menagerie {

// Insertion-ordered JSON keeps serialized files byte-stable across runs.
using Json = nlohmann::ordered_json;

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open for reading: " + path);
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

inline void save_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw io_error("write failed: " + path);
}

namespace detail {

inline Json points_to_json(const MatX& m) {
  Json rows = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename Mat>
Mat points_from_json(const Json& j, int cols, const std::string& what) {
  if (!j.is_array()) throw io_error(what + ": expected an array of rows");
  Mat m(static_cast<int>(j.size()), cols);
  for (int r = 0; r < m.rows(); ++r) {
    const Json& row = j[static_cast<size_t>(r)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw io_error(what + ": row " + std::to_string(r) + " must have " + std::to_string(cols) +
                     " numbers");
    }
    for (int c = 0; c < cols; ++c) {
      if (!row[static_cast<size_t>(c)].is_number()) throw io_error(what + ": non-numeric entry");
      m(r, c) = row[static_cast<size_t>(c)].get<double>();
    }
  }
  return m;
}

inline Json vec_to_json(const VecX& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline VecX vec_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw io_error(what + ": expected an array");
  VecX v(static_cast<int>(j.size()));
  for (int i = 0; i < v.size(); ++i) {
    if (!j[static_cast<size_t>(i)].is_number()) throw io_error(what + ": non-numeric entry");
    v(i) = j[static_cast<size_t>(i)].get<double>();
  }
  return v;
}

inline const Json& require(const Json& j, const std::string& key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) throw io_error(ctx + ": missing key '" + key + "'");
  return j.at(key);
}

inline Json bbox_to_json(const BBox& b) { return Json::array({b.cx, b.cy, b.w, b.h}); }

inline BBox bbox_from_json(const Json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 4) throw io_error(ctx + ": bbox must be [cx, cy, w, h]");
  BBox b;
  b.cx = j[0].get<double>();
  b.cy = j[1].get<double>();
  b.w = j[2].get<double>();
  b.h = j[3].get<double>();
  if (!b.is_valid()) throw io_error(ctx + ": invalid bbox values");
  return b;
}

}  // namespace detail

inline Json scene_to_json(const SceneAnnotation& scene) {
  Json j;
  j["schema_version"] = 1;
  j["scene_index"] = scene.scene_index;
  j["master_seed"] = scene.master_seed;
  j["scene_seed"] = scene.scene_seed;
  j["image_size"] = Json::array({scene.camera.image_width, scene.camera.image_height});
  Json cam;
  cam["focal"] = scene.camera.focal;
  cam["principal"] =
      Json::array({scene.camera.principal_point.x(), scene.camera.principal_point.y()});
  j["camera"] = std::move(cam);
  Json instances = Json::array();
  for (const SceneInstance& inst : scene.instances) {
    Json ji;
    ji["species_tag"] = inst.species_tag;
    ji["species_index"] = inst.species_index;
    ji["shape"] = detail::vec_to_json(inst.shape.beta);
    ji["pose"] = detail::points_to_json(inst.pose.theta);
    ji["translation"] =
        Json::array({inst.translation.x(), inst.translation.y(), inst.translation.z()});
    ji["yaw_deg"] = inst.yaw_deg;
    ji["pitch_deg"] = inst.pitch_deg;
    ji["bbox"] = detail::bbox_to_json(inst.bbox);
    Json kp2 = Json::array();
    for (int k = 0; k < inst.keypoints2d.rows(); ++k) {
      kp2.push_back(Json::array({inst.keypoints2d(k, 0), inst.keypoints2d(k, 1),
                                 static_cast<int>(inst.visibility[static_cast<size_t>(k)])}));
    }
    ji["keypoints2d"] = std::move(kp2);
    ji["keypoints3d"] = detail::points_to_json(inst.keypoints3d);
    Json layout;
    layout["bin"] = inst.layout.bin;
    layout["depth_interval"] = inst.layout.depth_interval;
    layout["tx_raw"] = inst.layout.tx_raw;
    layout["ty_raw"] = inst.layout.ty_raw;
    layout["tz_raw"] = inst.layout.tz_raw;
    ji["layout"] = std::move(layout);
    instances.push_back(std::move(ji));
  }
  j["instances"] = std::move(instances);
  return j;
}

inline SceneAnnotation scene_from_json(const Json& j) {
  if (detail::require(j, "schema_version", "scene").get<int>() != 1) {
    throw io_error("scene: unsupported schema_version");
  }
  SceneAnnotation scene;
  scene.scene_index = detail::require(j, "scene_index", "scene").get<int>();
  scene.master_seed = detail::require(j, "master_seed", "scene").get<std::uint64_t>();
  scene.scene_seed = detail::require(j, "scene_seed", "scene").get<std::uint64_t>();
  const Json& sz = detail::require(j, "image_size", "scene");
  const Json& cam = detail::require(j, "camera", "scene");
  const Json& pp = detail::require(cam, "principal", "camera");
  if (!sz.is_array() || sz.size() != 2 || !pp.is_array() || pp.size() != 2) {
    throw io_error("scene: image_size and camera.principal must be pairs");
  }
  scene.camera.image_width = sz[0].get<int>();
  scene.camera.image_height = sz[1].get<int>();
  scene.camera.focal = detail::require(cam, "focal", "camera").get<double>();
  scene.camera.principal_point = Vec2(pp[0].get<double>(), pp[1].get<double>());
  try {
    scene.camera.validate();
  } catch (const std::invalid_argument& e) {
    throw io_error(std::string("scene: ") + e.what());
  }
  const Json& instances = detail::require(j, "instances", "scene");
  if (!instances.is_array()) throw io_error("scene: instances must be an array");
  for (const Json& ji : instances) {
    SceneInstance inst;
    inst.species_tag = detail::require(ji, "species_tag", "instance").get<std::string>();
    inst.species_index = detail::require(ji, "species_index", "instance").get<int>();
    inst.shape.beta = detail::vec_from_json(detail::require(ji, "shape", "instance"), "shape");
    inst.pose.theta = detail::points_from_json<Points3>(detail::require(ji, "pose", "instance"),
                                                        3, "pose");
    const VecX t = detail::vec_from_json(detail::require(ji, "translation", "instance"),
                                         "translation");
    if (t.size() != 3) throw io_error("instance: translation must have 3 entries");
    inst.translation = t;
    inst.yaw_deg = detail::require(ji, "yaw_deg", "instance").get<double>();
    inst.pitch_deg = detail::require(ji, "pitch_deg", "instance").get<double>();
    inst.bbox = detail::bbox_from_json(detail::require(ji, "bbox", "instance"), "instance");
    const Json& kp2 = detail::require(ji, "keypoints2d", "instance");
    if (!kp2.is_array()) throw io_error("instance: keypoints2d must be an array");
    inst.keypoints2d.resize(static_cast<int>(kp2.size()), 2);
    inst.visibility.assign(kp2.size(), 0);
    for (size_t k = 0; k < kp2.size(); ++k) {
      const Json& row = kp2[k];
      if (!row.is_array() || row.size() != 3) {
        throw io_error("instance: keypoints2d rows must be [x, y, v]");
      }
      inst.keypoints2d(static_cast<int>(k), 0) = row[0].get<double>();
      inst.keypoints2d(static_cast<int>(k), 1) = row[1].get<double>();
      const int v = row[2].get<int>();
      if (v != 0 && v != 1) throw io_error("instance: visibility flags must be 0 or 1");
      inst.visibility[k] = static_cast<std::uint8_t>(v);
    }
    inst.keypoints3d = detail::points_from_json<Points3>(
        detail::require(ji, "keypoints3d", "instance"), 3, "keypoints3d");
    if (inst.keypoints3d.rows() != inst.keypoints2d.rows()) {
      throw io_error("instance: keypoints2d/keypoints3d length mismatch");
    }
    const Json& layout = detail::require(ji, "layout", "instance");
    inst.layout.bin = detail::require(layout, "bin", "layout").get<int>();
    inst.layout.depth_interval = detail::require(layout, "depth_interval", "layout").get<int>();
    inst.layout.tx_raw = detail::require(layout, "tx_raw", "layout").get<double>();
    inst.layout.ty_raw = detail::require(layout, "ty_raw", "layout").get<double>();
    inst.layout.tz_raw = detail::require(layout, "tz_raw", "layout").get<double>();
    inst.layout.tx = inst.translation.x();
    inst.layout.ty = inst.translation.y();
    inst.layout.tz = inst.translation.z();
    scene.instances.push_back(std::move(inst));
  }
  return scene;
}

// Corpus container. The `config` blob is an opaque echo of the fully resolved
// generation settings so a corpus can be regenerated from its own header.
inline Json corpus_to_json(const std::vector<SceneAnnotation>& scenes, std::uint64_t master_seed,
                           const Json& config_echo) {
  Json j;
  j["schema_version"] = 1;
  j["kind"] = "scenes";
  j["master_seed"] = master_seed;
  j["config"] = config_echo;
  Json arr = Json::array();
  for (const SceneAnnotation& s : scenes) arr.push_back(scene_to_json(s));
  j["scenes"] = std::move(arr);
  return j;
}

struct LoadedCorpus {
  std::uint64_t master_seed = 0;
  Json config;
  std::vector<SceneAnnotation> scenes;
};

inline LoadedCorpus corpus_from_json(const Json& j) {
  if (detail::require(j, "kind", "corpus").get<std::string>() != "scenes") {
    throw io_error("corpus: kind must be 'scenes'");
  }
  if (detail::require(j, "schema_version", "corpus").get<int>() != 1) {
    throw io_error("corpus: unsupported schema_version");
  }
  LoadedCorpus out;
  out.master_seed = detail::require(j, "master_seed", "corpus").get<std::uint64_t>();
  out.config = detail::require(j, "config", "corpus");
  for (const Json& js : detail::require(j, "scenes", "corpus")) {
    out.scenes.push_back(scene_from_json(js));
  }
  return out;
}

struct ScenePredictions {
  int scene_index = 0;
  std::vector<InstancePrediction> instances;
};

inline Json predictions_to_json(const std::vector<ScenePredictions>& scenes,
                                const Json& config_echo) {
  Json j;
  j["schema_version"] = 1;
  j["kind"] = "predictions";
  j["config"] = config_echo;
  Json arr = Json::array();
  for (const ScenePredictions& sp : scenes) {
    Json js;
    js["scene_index"] = sp.scene_index;
    Json insts = Json::array();
    for (const InstancePrediction& p : sp.instances) {
      Json jp;
      jp["confidence"] = p.confidence;
      jp["bbox"] = detail::bbox_to_json(p.bbox);
      jp["keypoints2d"] = detail::points_to_json(p.keypoints2d);
      jp["keypoints3d"] = detail::points_to_json(p.keypoints3d);
      jp["shape"] = detail::vec_to_json(p.shape.beta);
      jp["pose"] = detail::points_to_json(p.pose.theta);
      jp["translation"] = Json::array({p.translation.x(), p.translation.y(), p.translation.z()});
      insts.push_back(std::move(jp));
    }
    js["instances"] = std::move(insts);
    arr.push_back(std::move(js));
  }
  j["scenes"] = std::move(arr);
  return j;
}

struct LoadedPredictions {
  Json config;
  std::vector<ScenePredictions> scenes;
};

inline LoadedPredictions predictions_from_json(const Json& j) {
  if (detail::require(j, "kind", "predictions").get<std::string>() != "predictions") {
    throw io_error("predictions: kind must be 'predictions'");
  }
  if (detail::require(j, "schema_version", "predictions").get<int>() != 1) {
    throw io_error("predictions: unsupported schema_version");
  }
  LoadedPredictions out;
  out.config = j.contains("config") ? j.at("config") : Json::object();
  for (const Json& js : detail::require(j, "scenes", "predictions")) {
    ScenePredictions sp;
    sp.scene_index = detail::require(js, "scene_index", "prediction scene").get<int>();
    for (const Json& jp : detail::require(js, "instances", "prediction scene")) {
      InstancePrediction p;
      p.confidence = detail::require(jp, "confidence", "prediction").get<double>();
      if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
        throw io_error("prediction: confidence must be in [0, 1]");
      }
      p.bbox = detail::bbox_from_json(detail::require(jp, "bbox", "prediction"), "prediction");
      p.keypoints2d = detail::points_from_json<Points2>(
          detail::require(jp, "keypoints2d", "prediction"), 2, "keypoints2d");
      p.keypoints3d = detail::points_from_json<Points3>(
          detail::require(jp, "keypoints3d", "prediction"), 3, "keypoints3d");
      p.shape.beta = detail::vec_from_json(detail::require(jp, "shape", "prediction"), "shape");
      p.pose.theta = detail::points_from_json<Points3>(detail::require(jp, "pose", "prediction"),
                                                       3, "pose");
      const VecX t = detail::vec_from_json(detail::require(jp, "translation", "prediction"),
                                           "translation");
      if (t.size() != 3) throw io_error("prediction: translation must have 3 entries");
      p.translation = t;
      sp.instances.push_back(std::move(p));
    }
    out.scenes.push_back(std::move(sp));
  }
  return out;
}

}  // namespace menagerie
