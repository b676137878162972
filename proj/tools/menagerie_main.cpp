// Command-line front end: scene synthesis, decoding, matching, evaluation,
// and invariant self-checks. Every command is deterministic given its flags,
// seed, and input files, and echoes its fully resolved configuration into the
// output so runs can be reproduced from the artifacts alone.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "menagerie/body_model.hpp"
#include "menagerie/decoder.hpp"
#include "menagerie/json_io.hpp"
#include "menagerie/losses.hpp"
#include "menagerie/matching.hpp"
#include "menagerie/metrics.hpp"
#include "menagerie/scene.hpp"
#include "menagerie/selfcheck.hpp"
#include "menagerie/template_io.hpp"
#include "menagerie/weights_io.hpp"

namespace m = menagerie;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSpeciesTags[] = {"bovine", "canine", "equine", "cervine"};

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::uint64_t seed = 7;
  int num_scenes = 10;
  int min_animals = 2;
  int max_animals = 8;
  int species_count = 2;
  int pool_size = 16;
  m::ToyTemplateConfig template_cfg;  // template_cfg.seed is derived per species
  m::LayoutConfig layout;
  m::PerspectiveCamera camera;
  std::string out;
};

void apply_synth_config(const m::Json& j, SynthOptions& o) {
  if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("num_scenes")) o.num_scenes = j.at("num_scenes").get<int>();
  if (j.contains("min_animals")) o.min_animals = j.at("min_animals").get<int>();
  if (j.contains("max_animals")) o.max_animals = j.at("max_animals").get<int>();
  if (j.contains("species_count")) o.species_count = j.at("species_count").get<int>();
  if (j.contains("pool_size")) o.pool_size = j.at("pool_size").get<int>();
  if (j.contains("template")) {
    const m::Json& t = j.at("template");
    if (t.contains("n_verts")) o.template_cfg.n_verts = t.at("n_verts").get<int>();
    if (t.contains("shape_dim")) o.template_cfg.shape_dim = t.at("shape_dim").get<int>();
    if (t.contains("joint_count")) o.template_cfg.joint_count = t.at("joint_count").get<int>();
    if (t.contains("keypoint_count")) {
      o.template_cfg.keypoint_count = t.at("keypoint_count").get<int>();
    }
  }
  if (j.contains("layout")) {
    const m::Json& l = j.at("layout");
    if (l.contains("n_horizontal_bins")) o.layout.n_horizontal_bins = l.at("n_horizontal_bins").get<int>();
    if (l.contains("n_depth_intervals")) o.layout.n_depth_intervals = l.at("n_depth_intervals").get<int>();
    if (l.contains("tx_min")) o.layout.tx_min = l.at("tx_min").get<double>();
    if (l.contains("tx_max")) o.layout.tx_max = l.at("tx_max").get<double>();
    if (l.contains("tz_min")) o.layout.tz_min = l.at("tz_min").get<double>();
    if (l.contains("tz_max")) o.layout.tz_max = l.at("tz_max").get<double>();
    if (l.contains("depth_span_max")) o.layout.depth_span_max = l.at("depth_span_max").get<double>();
    if (l.contains("jitter_xz")) o.layout.jitter_xz = l.at("jitter_xz").get<double>();
    if (l.contains("ground_offset")) o.layout.ground_offset = l.at("ground_offset").get<double>();
  }
  if (j.contains("camera")) {
    const m::Json& c = j.at("camera");
    if (c.contains("focal")) o.camera.focal = c.at("focal").get<double>();
    if (c.contains("image_size")) {
      o.camera.image_width = c.at("image_size")[0].get<int>();
      o.camera.image_height = c.at("image_size")[1].get<int>();
    }
    if (c.contains("principal")) {
      o.camera.principal_point =
          m::Vec2(c.at("principal")[0].get<double>(), c.at("principal")[1].get<double>());
    }
  }
}

m::Json synth_config_echo(const SynthOptions& o) {
  m::Json j;
  j["seed"] = o.seed;
  j["num_scenes"] = o.num_scenes;
  j["min_animals"] = o.min_animals;
  j["max_animals"] = o.max_animals;
  j["species_count"] = o.species_count;
  j["pool_size"] = o.pool_size;
  m::Json t;
  t["n_verts"] = o.template_cfg.n_verts;
  t["shape_dim"] = o.template_cfg.shape_dim;
  t["joint_count"] = o.template_cfg.joint_count;
  t["keypoint_count"] = o.template_cfg.keypoint_count;
  j["template"] = std::move(t);
  m::Json l;
  l["n_horizontal_bins"] = o.layout.n_horizontal_bins;
  l["n_depth_intervals"] = o.layout.n_depth_intervals;
  l["tx_min"] = o.layout.tx_min;
  l["tx_max"] = o.layout.tx_max;
  l["ty"] = o.layout.ty;
  l["tz_min"] = o.layout.tz_min;
  l["tz_max"] = o.layout.tz_max;
  l["depth_span_max"] = o.layout.depth_span_max;
  l["jitter_xz"] = o.layout.jitter_xz;
  l["ground_offset"] = o.layout.ground_offset;
  l["pitch_range_deg"] = m::Json::array({o.layout.pitch_min_deg, o.layout.pitch_max_deg});
  l["yaw_range_deg"] = m::Json::array({o.layout.yaw_min_deg, o.layout.yaw_max_deg});
  j["layout"] = std::move(l);
  m::Json c;
  c["focal"] = o.camera.focal;
  c["principal"] = m::Json::array({o.camera.principal_point.x(), o.camera.principal_point.y()});
  c["image_size"] = m::Json::array({o.camera.image_width, o.camera.image_height});
  j["camera"] = std::move(c);
  return j;
}

std::vector<m::SpeciesAssets> build_species(const SynthOptions& o) {
  const int max_tags = static_cast<int>(std::size(kSpeciesTags));
  if (o.species_count < 1 || o.species_count > max_tags) {
    throw std::invalid_argument("species_count must be within [1, " + std::to_string(max_tags) +
                                "]");
  }
  std::vector<m::SpeciesAssets> out;
  for (int s = 0; s < o.species_count; ++s) {
    out.push_back(m::make_default_species(kSpeciesTags[s], o.template_cfg, o.pool_size,
                                          m::mix_seed(o.seed, 0xBEA575u + s)));
  }
  return out;
}

std::vector<m::SceneAnnotation> generate_scenes(const SynthOptions& o,
                                                const std::vector<m::SpeciesAssets>& species) {
  m::SceneConfig cfg;
  cfg.layout = o.layout;
  cfg.camera = o.camera;
  cfg.min_animals = o.min_animals;
  cfg.max_animals = o.max_animals;
  std::vector<m::SceneAnnotation> scenes;
  scenes.reserve(static_cast<size_t>(o.num_scenes));
  for (int i = 0; i < o.num_scenes; ++i) {
    scenes.push_back(m::assemble_scene(species, cfg, o.seed, i));
  }
  return scenes;
}

int cmd_synth(const SynthOptions& o) {
  if (o.num_scenes < 1) throw std::invalid_argument("--num-scenes must be >= 1");
  if (o.out.empty()) throw std::invalid_argument("synth: --out is required");
  const std::vector<m::SpeciesAssets> species = build_species(o);
  const std::vector<m::SceneAnnotation> scenes = generate_scenes(o, species);
  const m::Json echo = synth_config_echo(o);

  if (o.out.size() > 5 && o.out.substr(o.out.size() - 5) == ".json") {
    m::save_json_file(o.out, m::corpus_to_json(scenes, o.seed, echo));
  } else {
    std::error_code ec;
    fs::create_directories(o.out, ec);
    if (ec) throw m::io_error("cannot create output directory: " + o.out);
    for (const m::SceneAnnotation& s : scenes) {
      std::ostringstream name;
      name << "scene_" << std::setw(5) << std::setfill('0') << s.scene_index << ".json";
      m::save_json_file((fs::path(o.out) / name.str()).string(), m::scene_to_json(s));
    }
    m::Json index;
    index["schema_version"] = 1;
    index["kind"] = "corpus_index";
    index["master_seed"] = o.seed;
    index["config"] = echo;
    index["num_scenes"] = o.num_scenes;
    m::save_json_file((fs::path(o.out) / "corpus.json").string(), index);
  }

  std::map<int, int> count_hist;
  double occluded_sum = 0.0;
  int occluded_n = 0;
  for (const m::SceneAnnotation& s : scenes) {
    ++count_hist[static_cast<int>(s.instances.size())];
    const m::OcclusionStats st = m::occlusion_stats(s);
    for (int i = 0; i < st.occluded_fraction.size(); ++i) {
      occluded_sum += st.occluded_fraction(i);
      ++occluded_n;
    }
  }
  std::cout << "synth: wrote " << scenes.size() << " scenes to " << o.out << "\n";
  std::cout << "config: " << echo.dump() << "\n";
  std::cout << "instance-count histogram:\n";
  for (const auto& [count, scenes_with] : count_hist) {
    std::cout << "  " << count << " animals: " << scenes_with << " scenes\n";
  }
  std::cout << "mean occluded keypoint fraction: "
            << (occluded_n ? occluded_sum / occluded_n : 0.0) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// shared corpus loading

std::vector<m::SceneAnnotation> load_corpus(const std::string& path) {
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("scene_", 0) == 0 && entry.path().extension() == ".json") {
        files.push_back(entry.path().string());
      }
    }
    std::sort(files.begin(), files.end());
    std::vector<m::SceneAnnotation> scenes;
    for (const std::string& f : files) scenes.push_back(m::scene_from_json(m::load_json_file(f)));
    if (scenes.empty()) throw m::io_error("no scene files found in " + path);
    return scenes;
  }
  return m::corpus_from_json(m::load_json_file(path)).scenes;
}

// ---------------------------------------------------------------------------
// decode

// Default decoder sizing for the CLI: compact token/feature dimensions, but
// enough instance slots to cover any corpus the synthesizer can emit.
m::DecoderConfig default_cli_decoder() {
  m::DecoderConfig c;
  c.instance_slots = 30;
  return c;
}

struct DecodeOptions {
  std::uint64_t seed = 7;
  std::string annotations;
  std::string out;
  std::string prompts = "none";  // none | gt-keypoints | file
  std::string prompt_file;
  std::string weights_file;       // optional pre-built weights
  std::string save_weights_file;  // optionally persist the weights actually used
  bool train_mode = false;
  m::DecoderConfig decoder = default_cli_decoder();
  m::DropoutConfig dropout;
};

void apply_decode_config(const m::Json& j, DecodeOptions& o) {
  if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("prompts")) o.prompts = j.at("prompts").get<std::string>();
  if (j.contains("train_mode")) o.train_mode = j.at("train_mode").get<bool>();
  if (j.contains("decoder")) {
    const m::Json& d = j.at("decoder");
    if (d.contains("instance_slots")) o.decoder.instance_slots = d.at("instance_slots").get<int>();
    if (d.contains("token_dim")) o.decoder.token_dim = d.at("token_dim").get<int>();
    if (d.contains("layers")) o.decoder.layers = d.at("layers").get<int>();
    if (d.contains("heads")) o.decoder.heads = d.at("heads").get<int>();
    if (d.contains("attention_dim")) o.decoder.attention_dim = d.at("attention_dim").get<int>();
  }
  if (j.contains("dropout")) {
    const m::Json& d = j.at("dropout");
    if (d.contains("mask_drop")) o.dropout.mask_drop = d.at("mask_drop").get<double>();
    if (d.contains("keypoint_drop")) o.dropout.keypoint_drop = d.at("keypoint_drop").get<double>();
    if (d.contains("keypoint_rate_max")) {
      o.dropout.keypoint_rate_max = d.at("keypoint_rate_max").get<double>();
    }
  }
}

m::Json decode_config_echo(const DecodeOptions& o) {
  m::Json j;
  j["seed"] = o.seed;
  j["prompts"] = o.prompts;
  j["train_mode"] = o.train_mode;
  m::Json d;
  d["instance_slots"] = o.decoder.instance_slots;
  d["tokens_per_instance"] = o.decoder.tokens_per_instance();
  d["token_dim"] = o.decoder.token_dim;
  d["layers"] = o.decoder.layers;
  d["attention_dim"] = o.decoder.attention_dim;
  d["heads"] = o.decoder.heads;
  d["feature_grid"] = m::Json::array(
      {o.decoder.feature_height, o.decoder.feature_width, o.decoder.feature_channels});
  d["image_size"] = m::Json::array({o.decoder.image_width, o.decoder.image_height});
  j["decoder"] = std::move(d);
  m::Json dr;
  dr["mask_drop"] = o.dropout.mask_drop;
  dr["keypoint_drop"] = o.dropout.keypoint_drop;
  dr["keypoint_rate_max"] = o.dropout.keypoint_rate_max;
  j["dropout"] = std::move(dr);
  if (!o.weights_file.empty()) j["weights_file"] = o.weights_file;
  return j;
}

// Keypoint prompts straight from the annotation (normalized, visibility as
// validity), one prompt per ground-truth instance.
m::PromptSet gt_keypoint_prompts(const m::SceneAnnotation& scene, int slots) {
  m::PromptSet prompts;
  prompts.has_keypoints = true;
  const double iw = scene.camera.image_width;
  const double ih = scene.camera.image_height;
  const int n = std::min<int>(static_cast<int>(scene.instances.size()), slots);
  for (int i = 0; i < n; ++i) {
    const m::SceneInstance& inst = scene.instances[static_cast<size_t>(i)];
    m::PromptSet::KeypointPrompt kp;
    kp.coords.resize(inst.keypoints2d.rows(), 2);
    for (int k = 0; k < inst.keypoints2d.rows(); ++k) {
      kp.coords(k, 0) = inst.keypoints2d(k, 0) / iw;
      kp.coords(k, 1) = inst.keypoints2d(k, 1) / ih;
    }
    kp.valid = inst.visibility;
    prompts.keypoints.push_back(std::move(kp));
  }
  return prompts;
}

m::PromptSet prompts_from_file(const m::Json& j, int scene_index, const m::DecoderConfig& cfg) {
  m::PromptSet prompts;
  if (!j.contains("scenes")) throw m::io_error("prompt file: missing 'scenes'");
  for (const m::Json& js : j.at("scenes")) {
    if (js.at("scene_index").get<int>() != scene_index) continue;
    if (js.contains("keypoints")) {
      prompts.has_keypoints = true;
      for (const m::Json& jk : js.at("keypoints")) {
        m::PromptSet::KeypointPrompt kp;
        const m::Json& coords = jk.at("coords");
        kp.coords.resize(static_cast<int>(coords.size()), 2);
        for (int k = 0; k < kp.coords.rows(); ++k) {
          kp.coords(k, 0) = coords[static_cast<size_t>(k)][0].get<double>();
          kp.coords(k, 1) = coords[static_cast<size_t>(k)][1].get<double>();
        }
        for (const m::Json& v : jk.at("valid")) {
          kp.valid.push_back(static_cast<std::uint8_t>(v.get<int>() ? 1 : 0));
        }
        prompts.keypoints.push_back(std::move(kp));
      }
    }
    if (js.contains("mask")) {
      prompts.has_mask = true;
      const m::Json& rows = js.at("mask");
      prompts.mask.resize(cfg.feature_height, cfg.feature_width);
      if (static_cast<int>(rows.size()) != cfg.feature_height) {
        throw m::io_error("prompt file: mask height mismatch");
      }
      for (int r = 0; r < cfg.feature_height; ++r) {
        if (static_cast<int>(rows[static_cast<size_t>(r)].size()) != cfg.feature_width) {
          throw m::io_error("prompt file: mask width mismatch");
        }
        for (int c = 0; c < cfg.feature_width; ++c) {
          prompts.mask(r, c) = rows[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
        }
      }
    }
    break;
  }
  return prompts;
}

int cmd_decode(const DecodeOptions& o, const m::Json* prompt_json) {
  if (o.annotations.empty()) throw std::invalid_argument("decode: --annotations is required");
  if (o.out.empty()) throw std::invalid_argument("decode: --out is required");
  if (o.prompts != "none" && o.prompts != "gt-keypoints" && o.prompts != "file") {
    throw std::invalid_argument("decode: --prompts must be none, gt-keypoints, or file");
  }
  const std::vector<m::SceneAnnotation> scenes = load_corpus(o.annotations);
  if (scenes.empty()) throw std::invalid_argument("decode: empty corpus");
  const m::SceneAnnotation& first = scenes.front();
  if (first.instances.empty()) throw std::invalid_argument("decode: first scene has no instances");
  const int kp_count = static_cast<int>(first.instances.front().keypoints2d.rows());
  const int shape_dim = static_cast<int>(first.instances.front().shape.beta.size());
  const int joint_count = static_cast<int>(first.instances.front().pose.theta.rows());

  m::DecoderWeights weights =
      o.weights_file.empty()
          ? m::make_random_weights(o.decoder, kp_count, kp_count, shape_dim, joint_count, o.seed)
          : m::load_weights(o.weights_file);
  if (weights.prompt_keypoints != kp_count || weights.output_keypoints != kp_count ||
      weights.shape_dim != shape_dim || weights.joint_count != joint_count) {
    throw std::invalid_argument("decode: weights do not match the corpus dimensions");
  }
  if (!o.save_weights_file.empty()) m::save_weights(o.save_weights_file, weights);

  std::vector<m::ScenePredictions> out;
  for (const m::SceneAnnotation& scene : scenes) {
    const std::vector<double> image =
        m::render_overlay(scene, weights.config.image_height, weights.config.image_width);
    m::PromptSet prompts;
    if (o.prompts == "gt-keypoints") {
      prompts = gt_keypoint_prompts(scene, weights.config.instance_slots);
    } else if (o.prompts == "file") {
      if (prompt_json == nullptr) throw std::invalid_argument("decode: --prompt-file is required");
      prompts = prompts_from_file(*prompt_json, scene.scene_index, weights.config);
    }
    if (o.train_mode) {
      m::Rng drop_rng(m::mix_seed(o.seed, 0xD709u + static_cast<std::uint64_t>(scene.scene_index)));
      prompts = m::apply_prompt_dropout(prompts, o.dropout, drop_rng);
    }
    const std::vector<m::InstanceReadout> decoded =
        m::decode(image, prompts, weights,
                  m::mix_seed(o.seed, static_cast<std::uint64_t>(scene.scene_index)));

    m::ScenePredictions sp;
    sp.scene_index = scene.scene_index;
    const double iw = scene.camera.image_width;
    const double ih = scene.camera.image_height;
    for (const m::InstanceReadout& r : decoded) {
      m::InstancePrediction p;
      p.bbox = r.bbox;
      p.confidence = r.confidence;
      p.keypoints2d.resize(r.keypoints2d.rows(), 2);
      for (int k = 0; k < r.keypoints2d.rows(); ++k) {
        p.keypoints2d(k, 0) = r.keypoints2d(k, 0) * iw;  // files carry pixels
        p.keypoints2d(k, 1) = r.keypoints2d(k, 1) * ih;
      }
      p.keypoints3d = r.keypoints3d;
      p.shape = r.shape;
      p.pose = r.pose;
      p.translation = r.translation;
      sp.instances.push_back(std::move(p));
    }
    out.push_back(std::move(sp));
  }
  m::save_json_file(o.out, m::predictions_to_json(out, decode_config_echo(o)));
  std::cout << "decode: wrote predictions for " << out.size() << " scenes to " << o.out << "\n";
  std::cout << "config: " << decode_config_echo(o).dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// match

struct MatchOptions {
  std::string annotations;
  std::string predictions;
  std::string out;  // optional JSON report
  bool verify = false;
  m::MatchWeights weights;
};

void apply_match_config(const m::Json& j, MatchOptions& o) {
  if (j.contains("weights")) {
    const m::Json& w = j.at("weights");
    if (w.contains("lambda_conf")) o.weights.lambda_conf = w.at("lambda_conf").get<double>();
    if (w.contains("lambda_bbox")) o.weights.lambda_bbox = w.at("lambda_bbox").get<double>();
    if (w.contains("lambda_giou")) o.weights.lambda_giou = w.at("lambda_giou").get<double>();
    if (w.contains("lambda_kpts")) o.weights.lambda_kpts = w.at("lambda_kpts").get<double>();
    if (w.contains("focal_alpha")) o.weights.focal_alpha = w.at("focal_alpha").get<double>();
    if (w.contains("focal_gamma")) o.weights.focal_gamma = w.at("focal_gamma").get<double>();
  }
}

m::Json match_config_echo(const MatchOptions& o) {
  m::Json j;
  m::Json w;
  w["lambda_conf"] = o.weights.lambda_conf;
  w["lambda_bbox"] = o.weights.lambda_bbox;
  w["lambda_giou"] = o.weights.lambda_giou;
  w["lambda_kpts"] = o.weights.lambda_kpts;
  w["focal_alpha"] = o.weights.focal_alpha;
  w["focal_gamma"] = o.weights.focal_gamma;
  j["weights"] = std::move(w);
  j["verify"] = o.verify;
  return j;
}

// Ground truths in matcher space: normalized keypoints, stored boxes.
std::vector<m::GroundTruthInstance> scene_to_gts(const m::SceneAnnotation& scene) {
  std::vector<m::GroundTruthInstance> gts;
  const double iw = scene.camera.image_width;
  const double ih = scene.camera.image_height;
  for (const m::SceneInstance& inst : scene.instances) {
    m::GroundTruthInstance g;
    g.bbox = inst.bbox;
    g.keypoints2d.resize(inst.keypoints2d.rows(), 2);
    for (int k = 0; k < inst.keypoints2d.rows(); ++k) {
      g.keypoints2d(k, 0) = inst.keypoints2d(k, 0) / iw;
      g.keypoints2d(k, 1) = inst.keypoints2d(k, 1) / ih;
    }
    g.visibility = inst.visibility;
    g.keypoints3d = inst.keypoints3d;
    g.shape = inst.shape;
    g.pose = inst.pose;
    g.translation = inst.translation;
    gts.push_back(std::move(g));
  }
  return gts;
}

std::vector<m::InstancePrediction> to_matcher_preds(const m::ScenePredictions& sp,
                                                    const m::SceneAnnotation& scene) {
  std::vector<m::InstancePrediction> preds = sp.instances;
  const double iw = scene.camera.image_width;
  const double ih = scene.camera.image_height;
  for (m::InstancePrediction& p : preds) {
    for (int k = 0; k < p.keypoints2d.rows(); ++k) {
      p.keypoints2d(k, 0) /= iw;
      p.keypoints2d(k, 1) /= ih;
    }
  }
  return preds;
}

int cmd_match(const MatchOptions& o) {
  if (o.annotations.empty() || o.predictions.empty()) {
    throw std::invalid_argument("match: --annotations and --predictions are required");
  }
  const std::vector<m::SceneAnnotation> scenes = load_corpus(o.annotations);
  const m::LoadedPredictions preds = m::predictions_from_json(m::load_json_file(o.predictions));
  std::map<int, const m::ScenePredictions*> by_index;
  for (const m::ScenePredictions& sp : preds.scenes) by_index[sp.scene_index] = &sp;

  const m::Json echo = match_config_echo(o);
  std::cout << "match weights (conf, bbox, giou, kpts) = (" << o.weights.lambda_conf << ","
            << o.weights.lambda_bbox << "," << o.weights.lambda_giou << ","
            << o.weights.lambda_kpts << ")  focal (alpha, gamma) = (" << o.weights.focal_alpha
            << "," << o.weights.focal_gamma << ")\n";

  m::Json report;
  report["schema_version"] = 1;
  report["kind"] = "match_report";
  report["config"] = echo;
  m::Json scenes_json = m::Json::array();
  int verified = 0;
  for (const m::SceneAnnotation& scene : scenes) {
    const auto it = by_index.find(scene.scene_index);
    if (it == by_index.end()) {
      throw std::invalid_argument("match: no predictions for scene " +
                                  std::to_string(scene.scene_index));
    }
    const std::vector<m::GroundTruthInstance> gts = scene_to_gts(scene);
    const std::vector<m::InstancePrediction> scene_preds = to_matcher_preds(*it->second, scene);
    const m::MatchResult res = m::match_and_reorder(scene_preds, gts, o.weights);

    if (o.verify) {
      const m::MatX cost = m::build_cost_matrix(scene_preds, gts, o.weights);
      const double optimal = m::min_injection_cost_exhaustive(cost);
      if (std::abs(res.total_cost - optimal) > 1e-9) {
        std::cout << "scene " << scene.scene_index << ": VERIFY FAILED (got " << res.total_cost
                  << ", optimal " << optimal << ")\n";
        throw std::invalid_argument("match: assignment verification failed");
      }
      ++verified;
    }

    m::Json js;
    js["scene_index"] = scene.scene_index;
    js["assignment"] = res.assignment;
    js["total_cost"] = res.total_cost;
    m::Json pairs = m::Json::array();
    for (size_t i = 0; i < res.pair_costs.size(); ++i) {
      const m::CostBreakdown& c = res.pair_costs[i];
      m::Json jp;
      jp["gt"] = static_cast<int>(i);
      jp["prediction"] = res.assignment[i];
      jp["conf_cost"] = c.conf;
      jp["bbox_cost"] = c.bbox;
      jp["giou_cost"] = c.giou;
      jp["keypoint_cost"] = c.kpts;
      jp["weighted_total"] = c.weighted_total;
      pairs.push_back(std::move(jp));
    }
    js["pairs"] = std::move(pairs);
    js["unmatched_predictions"] = res.unmatched;
    scenes_json.push_back(std::move(js));

    std::cout << "scene " << scene.scene_index << ": total cost " << res.total_cost
              << ", assignment [";
    for (size_t i = 0; i < res.assignment.size(); ++i) {
      std::cout << (i ? " " : "") << res.assignment[i];
    }
    std::cout << "]\n";
  }
  report["scenes"] = std::move(scenes_json);
  if (o.verify) {
    std::cout << "verified " << verified << " scenes against exhaustive assignment search\n";
  }
  if (!o.out.empty()) m::save_json_file(o.out, report);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string annotations;
  std::string predictions;
  std::string out;  // optional JSON report
  m::EvalConfig eval;
  m::MatchWeights pair_weights;  // used to pair predictions with ground truths
};

void apply_eval_config(const m::Json& j, EvalOptions& o) {
  if (j.contains("pck_threshold")) o.eval.pck_threshold = j.at("pck_threshold").get<double>();
  if (j.contains("pck_normalizer")) {
    const std::string n = j.at("pck_normalizer").get<std::string>();
    if (n == "bbox-max-side") {
      o.eval.pck_normalizer = m::EvalConfig::PckNormalizer::kBBoxMaxSide;
    } else if (n == "bbox-diagonal") {
      o.eval.pck_normalizer = m::EvalConfig::PckNormalizer::kBBoxDiagonal;
    } else {
      throw std::invalid_argument("eval: unknown pck_normalizer " + n);
    }
  }
  if (j.contains("oks_sigma")) {
    // uniform sigma shorthand; per-keypoint sigmas can be given as an array
    o.eval.oks_sigmas = m::VecX();
    if (j.at("oks_sigma").is_array()) {
      o.eval.oks_sigmas.resize(static_cast<int>(j.at("oks_sigma").size()));
      for (int i = 0; i < o.eval.oks_sigmas.size(); ++i) {
        o.eval.oks_sigmas(i) = j.at("oks_sigma")[static_cast<size_t>(i)].get<double>();
      }
    }
  }
  if (j.contains("ap_thresholds")) {
    o.eval.ap_thresholds.clear();
    for (const m::Json& t : j.at("ap_thresholds")) o.eval.ap_thresholds.push_back(t.get<double>());
  }
}

m::Json eval_config_echo(const EvalOptions& o) {
  m::Json j;
  j["pck_threshold"] = o.eval.pck_threshold;
  j["pck_normalizer"] = o.eval.pck_normalizer == m::EvalConfig::PckNormalizer::kBBoxMaxSide
                            ? "bbox-max-side"
                            : "bbox-diagonal";
  j["oks_sigma"] = o.eval.oks_sigmas.size() == 0 ? m::Json(0.05)
                                                 : m::Json(std::vector<double>(
                                                       o.eval.oks_sigmas.data(),
                                                       o.eval.oks_sigmas.data() +
                                                           o.eval.oks_sigmas.size()));
  j["ap_thresholds"] = o.eval.ap_thresholds;
  j["visibility_buckets"] = "thirds of the keypoint count (low/mid/high)";
  return j;
}

struct BucketAccum {
  double pa_sum = 0.0;
  int pa_n = 0;
  double pck_sum = 0.0;
  int pck_n = 0;
};

int visibility_bucket(const m::VisibilityMask& vis) {
  int visible = 0;
  for (const auto v : vis) visible += v ? 1 : 0;
  const int k = static_cast<int>(vis.size());
  if (k == 0) return 0;
  if (3 * visible < k) return 0;      // low
  if (3 * visible < 2 * k) return 1;  // mid
  return 2;                           // high
}

int cmd_eval(const EvalOptions& o) {
  if (o.annotations.empty() || o.predictions.empty()) {
    throw std::invalid_argument("eval: --annotations and --predictions are required");
  }
  const std::vector<m::SceneAnnotation> scenes = load_corpus(o.annotations);
  const m::LoadedPredictions preds = m::predictions_from_json(m::load_json_file(o.predictions));
  std::map<int, const m::ScenePredictions*> by_index;
  for (const m::ScenePredictions& sp : preds.scenes) by_index[sp.scene_index] = &sp;

  BucketAccum overall;
  BucketAccum buckets[3];
  std::vector<m::ApScene> ap_scenes;
  std::vector<m::ApScene> ap_buckets[3];

  for (const m::SceneAnnotation& scene : scenes) {
    const auto it = by_index.find(scene.scene_index);
    if (it == by_index.end()) {
      throw std::invalid_argument("eval: no predictions for scene " +
                                  std::to_string(scene.scene_index));
    }
    const std::vector<m::GroundTruthInstance> gts = scene_to_gts(scene);
    const std::vector<m::InstancePrediction> scene_preds = to_matcher_preds(*it->second, scene);
    if (gts.size() > scene_preds.size()) {
      throw std::invalid_argument("eval: fewer predictions than ground truths in scene " +
                                  std::to_string(scene.scene_index));
    }
    const m::MatchResult res = m::match_and_reorder(scene_preds, gts, o.pair_weights);

    const double iw = scene.camera.image_width;
    const double ih = scene.camera.image_height;
    for (size_t i = 0; i < gts.size(); ++i) {
      const m::SceneInstance& gt_inst = scene.instances[i];
      const m::InstancePrediction& p = res.matched[i];
      const int bucket = visibility_bucket(gt_inst.visibility);

      const auto err3d = m::pa_mpjpe(p.keypoints3d, gt_inst.keypoints3d);
      if (err3d) {
        overall.pa_sum += *err3d;
        ++overall.pa_n;
        buckets[bucket].pa_sum += *err3d;
        ++buckets[bucket].pa_n;
      }
      m::Points2 pred_px = p.keypoints2d;
      for (int k = 0; k < pred_px.rows(); ++k) {
        pred_px(k, 0) *= iw;
        pred_px(k, 1) *= ih;
      }
      const auto frac = m::pck(pred_px, gt_inst.keypoints2d, gt_inst.visibility, gt_inst.bbox,
                               scene.camera, o.eval);
      if (frac) {
        overall.pck_sum += *frac;
        ++overall.pck_n;
        buckets[bucket].pck_sum += *frac;
        ++buckets[bucket].pck_n;
      }
    }

    // AP inputs: every prediction with its confidence, every ground truth.
    m::ApScene ap;
    for (const m::InstancePrediction& p : it->second->instances) {
      ap.predictions.push_back({p.keypoints2d, p.confidence});
    }
    for (const m::SceneInstance& inst : scene.instances) {
      m::ApGroundTruth g;
      g.keypoints_px = inst.keypoints2d;
      g.visibility = inst.visibility;
      g.area_px2 = inst.bbox.area() * iw * ih;
      if (!(g.area_px2 > 0.0)) g.area_px2 = 1.0;  // degenerate boxes still score
      ap.ground_truths.push_back(std::move(g));
    }
    ap_scenes.push_back(ap);
    for (int b = 0; b < 3; ++b) {
      m::ApScene filtered = ap;
      for (size_t i = 0; i < filtered.ground_truths.size(); ++i) {
        filtered.ground_truths[i].ignore =
            visibility_bucket(scene.instances[i].visibility) != b;
      }
      ap_buckets[b].push_back(std::move(filtered));
    }
  }

  const auto ap_all = m::average_precision(ap_scenes, o.eval);
  auto fmt = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(6) << v;
    return s.str();
  };
  const char* bucket_names[3] = {"low", "mid", "high"};

  m::Json report;
  report["schema_version"] = 1;
  report["kind"] = "metrics_report";
  report["config"] = eval_config_echo(o);
  std::cout << "metric            value\n";
  std::cout << "pa-mpjpe          "
            << (overall.pa_n ? fmt(overall.pa_sum / overall.pa_n) : "n/a") << "\n";
  std::cout << "pck@" << o.eval.pck_threshold << "           "
            << (overall.pck_n ? fmt(overall.pck_sum / overall.pck_n) : "n/a") << "\n";
  report["pa_mpjpe"] = overall.pa_n ? m::Json(overall.pa_sum / overall.pa_n) : m::Json();
  report["pck"] = overall.pck_n ? m::Json(overall.pck_sum / overall.pck_n) : m::Json();
  if (ap_all) {
    std::cout << "ap@0.50           " << fmt(ap_all->ap_per_threshold.front()) << "\n";
    std::cout << "map               " << fmt(ap_all->map) << "\n";
    report["ap_per_threshold"] = ap_all->ap_per_threshold;
    report["map"] = ap_all->map;
  } else {
    std::cout << "ap/map            n/a (no ground truths)\n";
    report["ap_per_threshold"] = m::Json();
    report["map"] = m::Json();
  }
  m::Json jbuckets;
  for (int b = 0; b < 3; ++b) {
    m::Json jb;
    jb["pa_mpjpe"] = buckets[b].pa_n ? m::Json(buckets[b].pa_sum / buckets[b].pa_n) : m::Json();
    jb["pck"] = buckets[b].pck_n ? m::Json(buckets[b].pck_sum / buckets[b].pck_n) : m::Json();
    const auto ap_b = m::average_precision(ap_buckets[b], o.eval);
    jb["map"] = ap_b ? m::Json(ap_b->map) : m::Json();
    std::cout << "bucket " << bucket_names[b] << ": pa-mpjpe "
              << (buckets[b].pa_n ? fmt(buckets[b].pa_sum / buckets[b].pa_n) : "n/a") << ", pck "
              << (buckets[b].pck_n ? fmt(buckets[b].pck_sum / buckets[b].pck_n) : "n/a")
              << ", map " << (ap_b ? fmt(ap_b->map) : "n/a") << "\n";
    jbuckets[bucket_names[b]] = std::move(jb);
  }
  report["visibility_buckets"] = std::move(jbuckets);
  if (!o.out.empty()) m::save_json_file(o.out, report);
  return 0;
}

// ---------------------------------------------------------------------------
// selfcheck

int cmd_selfcheck(const std::string& template_path) {
  m::SelfcheckOptions opts;
  opts.template_path = template_path;
  if (const char* mut = std::getenv("MENAGERIE_MUTATE")) {
    const std::string s = mut;
    if (s == "greedy-matcher") {
      opts.mutation = m::Mutation::kGreedyMatcher;
    } else if (s == "skin-weights") {
      opts.mutation = m::Mutation::kBreakSkinWeights;
    } else if (!s.empty()) {
      throw std::invalid_argument("unknown MENAGERIE_MUTATE value: " + s);
    }
  }
  const std::vector<m::SuiteResult> results = m::run_selfcheck(opts);
  bool all_ok = true;
  for (const m::SuiteResult& r : results) {
    if (r.passed) {
      std::cout << "ok   " << r.name << "\n";
    } else {
      std::cout << "FAIL " << r.name << ": " << r.message << "\n";
      all_ok = false;
    }
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"menagerie: multi-animal scene synthesis, matching, and evaluation toolkit"};
  app.require_subcommand(1);

  std::string config_path;

  // synth
  auto* synth = app.add_subcommand("synth", "generate an annotated multi-animal scene corpus");
  SynthOptions so;
  synth->add_option("--seed", so.seed, "master seed");
  synth->add_option("--num-scenes", so.num_scenes, "number of scenes to generate");
  synth->add_option("--min-animals", so.min_animals, "minimum animals per scene");
  synth->add_option("--max-animals", so.max_animals, "maximum animals per scene");
  synth->add_option("--out", so.out, "output corpus file (.json) or directory");
  synth->add_option("--config", config_path, "JSON config file");

  // decode
  auto* decode = app.add_subcommand("decode", "run the toy decoder over a corpus");
  DecodeOptions deco;
  decode->add_option("--seed", deco.seed, "weight/init seed");
  decode->add_option("--annotations", deco.annotations, "input corpus file or directory");
  decode->add_option("--out", deco.out, "output prediction file");
  decode->add_option("--prompts", deco.prompts, "none | gt-keypoints | file");
  decode->add_option("--prompt-file", deco.prompt_file, "prompt JSON (with --prompts file)");
  decode->add_option("--weights", deco.weights_file, "load decoder weights instead of seeding");
  decode->add_option("--save-weights", deco.save_weights_file,
                     "write the weights used for this run to a file");
  decode->add_flag("--train-mode", deco.train_mode, "apply prompt dropout before decoding");
  decode->add_option("--config", config_path, "JSON config file");

  // match
  auto* match = app.add_subcommand("match", "assign predictions to ground truths per scene");
  MatchOptions mo;
  match->add_option("--annotations", mo.annotations, "input corpus file or directory");
  match->add_option("--predictions", mo.predictions, "prediction file");
  match->add_option("--out", mo.out, "optional JSON report path");
  match->add_flag("--verify", mo.verify, "cross-check against exhaustive assignment search");
  match->add_option("--config", config_path, "JSON config file");

  // eval
  auto* eval = app.add_subcommand("eval", "compute corpus metrics from predictions");
  EvalOptions eo;
  eval->add_option("--annotations", eo.annotations, "input corpus file or directory");
  eval->add_option("--predictions", eo.predictions, "prediction file");
  eval->add_option("--out", eo.out, "optional JSON report path");
  eval->add_option("--config", config_path, "JSON config file");

  // selfcheck
  auto* selfcheck = app.add_subcommand("selfcheck", "run the built-in invariant suites");
  std::string template_path;
  selfcheck->add_option("--template", template_path, "also validate this template file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    // Resolution order: built-in defaults, then config file, then flags.
    m::Json config = m::Json::object();
    if (!config_path.empty()) config = m::load_json_file(config_path);
    auto flag_given = [](const CLI::App* cmd, const std::string& name) {
      return cmd->count(name) > 0;
    };

    if (synth->parsed()) {
      SynthOptions resolved;  // defaults
      apply_synth_config(config, resolved);
      if (flag_given(synth, "--seed")) resolved.seed = so.seed;
      if (flag_given(synth, "--num-scenes")) resolved.num_scenes = so.num_scenes;
      if (flag_given(synth, "--min-animals")) resolved.min_animals = so.min_animals;
      if (flag_given(synth, "--max-animals")) resolved.max_animals = so.max_animals;
      resolved.out = so.out;
      return cmd_synth(resolved);
    }
    if (decode->parsed()) {
      DecodeOptions resolved;
      apply_decode_config(config, resolved);
      if (flag_given(decode, "--seed")) resolved.seed = deco.seed;
      if (flag_given(decode, "--prompts")) resolved.prompts = deco.prompts;
      if (flag_given(decode, "--train-mode")) resolved.train_mode = deco.train_mode;
      resolved.annotations = deco.annotations;
      resolved.out = deco.out;
      resolved.prompt_file = deco.prompt_file;
      resolved.weights_file = deco.weights_file;
      resolved.save_weights_file = deco.save_weights_file;
      std::optional<m::Json> prompt_json;
      if (resolved.prompts == "file") {
        if (resolved.prompt_file.empty()) {
          throw std::invalid_argument("decode: --prompts file needs --prompt-file");
        }
        prompt_json = m::load_json_file(resolved.prompt_file);
      }
      return cmd_decode(resolved, prompt_json ? &*prompt_json : nullptr);
    }
    if (match->parsed()) {
      MatchOptions resolved;
      apply_match_config(config, resolved);
      resolved.annotations = mo.annotations;
      resolved.predictions = mo.predictions;
      resolved.out = mo.out;
      resolved.verify = mo.verify;
      return cmd_match(resolved);
    }
    if (eval->parsed()) {
      EvalOptions resolved;
      apply_eval_config(config, resolved);
      resolved.annotations = eo.annotations;
      resolved.predictions = eo.predictions;
      resolved.out = eo.out;
      return cmd_eval(resolved);
    }
    if (selfcheck->parsed()) {
      return cmd_selfcheck(template_path);
    }
  } catch (const m::io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
