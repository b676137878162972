#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "menagerie/decoder.hpp"
#include "menagerie/json_io.hpp"
#include "menagerie/scene.hpp"
#include "menagerie/template_io.hpp"
#include "menagerie/weights_io.hpp"

using namespace menagerie;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "menagerie_io_tests";
  fs::create_directories(dir);
  return dir;
}

std::vector<SpeciesAssets> tiny_species() {
  ToyTemplateConfig tc;
  tc.n_verts = 24;
  tc.shape_dim = 3;
  tc.joint_count = 9;
  tc.keypoint_count = 5;
  std::vector<SpeciesAssets> species;
  species.push_back(make_default_species("bovine", tc, 4, 100));
  species.push_back(make_default_species("canine", tc, 4, 200));
  return species;
}

SceneConfig tiny_scene_config() {
  SceneConfig cfg;
  cfg.min_animals = 2;
  cfg.max_animals = 3;
  return cfg;
}

std::string read_file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  REQUIRE(out.good());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("scene annotations survive a JSON round trip byte for byte") {
  const std::vector<SpeciesAssets> species = tiny_species();
  const SceneConfig cfg = tiny_scene_config();
  const SceneAnnotation scene = assemble_scene(species, cfg, 4242, 3);
  REQUIRE(!scene.instances.empty());

  const Json j = scene_to_json(scene);
  const SceneAnnotation back = scene_from_json(j);

  REQUIRE(back.scene_index == scene.scene_index);
  REQUIRE(back.master_seed == scene.master_seed);
  REQUIRE(back.scene_seed == scene.scene_seed);
  REQUIRE(back.camera.focal == scene.camera.focal);
  REQUIRE(back.camera.image_width == scene.camera.image_width);
  REQUIRE(back.instances.size() == scene.instances.size());
  for (size_t i = 0; i < scene.instances.size(); ++i) {
    const SceneInstance& a = scene.instances[i];
    const SceneInstance& b = back.instances[i];
    REQUIRE(b.species_tag == a.species_tag);
    REQUIRE(b.species_index == a.species_index);
    REQUIRE((b.shape.beta.array() == a.shape.beta.array()).all());
    REQUIRE((b.pose.theta.array() == a.pose.theta.array()).all());
    REQUIRE((b.translation.array() == a.translation.array()).all());
    REQUIRE(b.yaw_deg == a.yaw_deg);
    REQUIRE(b.pitch_deg == a.pitch_deg);
    REQUIRE(b.bbox.cx == a.bbox.cx);
    REQUIRE(b.bbox.h == a.bbox.h);
    REQUIRE((b.keypoints2d.array() == a.keypoints2d.array()).all());
    REQUIRE((b.keypoints3d.array() == a.keypoints3d.array()).all());
    REQUIRE(b.visibility == a.visibility);
    REQUIRE(b.layout.bin == a.layout.bin);
    REQUIRE(b.layout.depth_interval == a.layout.depth_interval);
    REQUIRE(b.layout.tx_raw == a.layout.tx_raw);
    REQUIRE(b.layout.ty_raw == a.layout.ty_raw);
    REQUIRE(b.layout.tz_raw == a.layout.tz_raw);
    REQUIRE(b.layout.tx == a.translation.x());
    REQUIRE(b.layout.tz == a.translation.z());
  }

  // Serializing the parsed copy reproduces the original text exactly.
  REQUIRE(scene_to_json(back).dump(2) == j.dump(2));
}

TEST_CASE("corpus files round trip through disk") {
  const std::vector<SpeciesAssets> species = tiny_species();
  const SceneConfig cfg = tiny_scene_config();
  std::vector<SceneAnnotation> scenes;
  for (int i = 0; i < 3; ++i) scenes.push_back(assemble_scene(species, cfg, 777, i));

  Json echo;
  echo["seed"] = 777;
  echo["note"] = "settings echo";
  const Json j = corpus_to_json(scenes, 777, echo);

  const fs::path path = temp_dir() / "corpus_roundtrip.json";
  save_json_file(path.string(), j);
  const Json loaded_json = load_json_file(path.string());
  REQUIRE(loaded_json.dump(2) == j.dump(2));

  const LoadedCorpus corpus = corpus_from_json(loaded_json);
  REQUIRE(corpus.master_seed == 777);
  REQUIRE(corpus.config.at("note").get<std::string>() == "settings echo");
  REQUIRE(corpus.scenes.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(scene_to_json(corpus.scenes[i]).dump(2) == scene_to_json(scenes[i]).dump(2));
  }
}

TEST_CASE("prediction files round trip and preserve every field") {
  std::vector<ScenePredictions> scenes(2);
  scenes[0].scene_index = 0;
  scenes[1].scene_index = 1;
  Rng rng(9001);
  for (ScenePredictions& sp : scenes) {
    for (int i = 0; i < 3; ++i) {
      InstancePrediction p;
      p.confidence = rng.uniform(0.0, 1.0);
      p.bbox = BBox{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.05, 0.2),
                    rng.uniform(0.05, 0.2)};
      p.keypoints2d.resize(4, 2);
      p.keypoints3d.resize(4, 3);
      for (int k = 0; k < 4; ++k) {
        p.keypoints2d.row(k) << rng.uniform(0.0, 512.0), rng.uniform(0.0, 512.0);
        p.keypoints3d.row(k) << rng.normal(), rng.normal(), rng.normal() + 12.0;
      }
      p.shape.beta = VecX::Zero(3);
      p.shape.beta << rng.normal(), rng.normal(), rng.normal();
      p.pose.theta = Points3::Zero(2, 3);
      p.pose.theta(1, 1) = rng.normal();
      p.translation = Vec3(rng.normal(), rng.normal(), 15.0);
      sp.instances.push_back(std::move(p));
    }
  }

  Json echo;
  echo["weights_seed"] = 5;
  const Json j = predictions_to_json(scenes, echo);
  const fs::path path = temp_dir() / "predictions_roundtrip.json";
  save_json_file(path.string(), j);
  const LoadedPredictions back = predictions_from_json(load_json_file(path.string()));

  REQUIRE(back.config.at("weights_seed").get<int>() == 5);
  REQUIRE(back.scenes.size() == 2);
  for (size_t s = 0; s < 2; ++s) {
    REQUIRE(back.scenes[s].scene_index == scenes[s].scene_index);
    REQUIRE(back.scenes[s].instances.size() == scenes[s].instances.size());
    for (size_t i = 0; i < scenes[s].instances.size(); ++i) {
      const InstancePrediction& a = scenes[s].instances[i];
      const InstancePrediction& b = back.scenes[s].instances[i];
      REQUIRE(b.confidence == a.confidence);
      REQUIRE(b.bbox.cx == a.bbox.cx);
      REQUIRE(b.bbox.cy == a.bbox.cy);
      REQUIRE(b.bbox.w == a.bbox.w);
      REQUIRE(b.bbox.h == a.bbox.h);
      REQUIRE((b.keypoints2d.array() == a.keypoints2d.array()).all());
      REQUIRE((b.keypoints3d.array() == a.keypoints3d.array()).all());
      REQUIRE((b.shape.beta.array() == a.shape.beta.array()).all());
      REQUIRE((b.pose.theta.array() == a.pose.theta.array()).all());
      REQUIRE((b.translation.array() == a.translation.array()).all());
    }
  }
  REQUIRE(predictions_to_json(back.scenes, back.config).dump(2) == j.dump(2));
}

TEST_CASE("schema violations are rejected with I/O errors") {
  const std::vector<SpeciesAssets> species = tiny_species();
  const SceneAnnotation scene = assemble_scene(species, tiny_scene_config(), 31, 0);
  const Json good = scene_to_json(scene);

  Json j = good;
  j.erase("camera");
  REQUIRE_THROWS_AS(scene_from_json(j), io_error);

  j = good;
  j["schema_version"] = 2;
  REQUIRE_THROWS_AS(scene_from_json(j), io_error);

  j = good;
  j["instances"][0].erase("bbox");
  REQUIRE_THROWS_AS(scene_from_json(j), io_error);

  j = good;
  j["instances"][0]["keypoints2d"][0][2] = 2;  // visibility flag outside {0, 1}
  REQUIRE_THROWS_AS(scene_from_json(j), io_error);

  j = good;
  j["instances"][0]["bbox"][2] = -0.25;  // negative width
  REQUIRE_THROWS_AS(scene_from_json(j), io_error);

  j = good;
  j["instances"][0]["keypoints3d"].erase(0);  // 2D/3D keypoint count mismatch
  REQUIRE_THROWS_AS(scene_from_json(j), io_error);

  j = good;
  j["instances"][0]["translation"] = Json::array({1.0, 2.0});
  REQUIRE_THROWS_AS(scene_from_json(j), io_error);

  // Corpus and prediction headers are checked too.
  Json corpus = corpus_to_json({scene}, 31, Json::object());
  corpus["kind"] = "something-else";
  REQUIRE_THROWS_AS(corpus_from_json(corpus), io_error);

  std::vector<ScenePredictions> preds(1);
  preds[0].scene_index = 0;
  InstancePrediction p;
  p.confidence = 0.5;
  p.bbox = BBox{0.5, 0.5, 0.2, 0.2};
  p.keypoints2d = Points2::Zero(2, 2);
  p.keypoints3d = Points3::Zero(2, 3);
  p.shape.beta = VecX::Zero(1);
  p.pose.theta = Points3::Zero(1, 3);
  preds[0].instances.push_back(p);
  Json pj = predictions_to_json(preds, Json::object());
  pj["scenes"][0]["instances"][0]["confidence"] = 1.5;
  REQUIRE_THROWS_AS(predictions_from_json(pj), io_error);
}

TEST_CASE("file-level failures raise I/O errors") {
  const fs::path missing = temp_dir() / "does_not_exist.json";
  std::error_code ec;
  fs::remove(missing, ec);
  REQUIRE_THROWS_AS(load_json_file(missing.string()), io_error);

  const fs::path garbage = temp_dir() / "garbage.json";
  write_file_bytes(garbage, "{not json at all");
  REQUIRE_THROWS_AS(load_json_file(garbage.string()), io_error);

  REQUIRE_THROWS_AS(load_template((temp_dir() / "missing.tpl").string()), io_error);
  REQUIRE_THROWS_AS(load_weights((temp_dir() / "missing.wts").string()), io_error);
}

TEST_CASE("template binaries round trip bitwise and reject corruption") {
  ToyTemplateConfig tc;
  tc.n_verts = 40;
  tc.shape_dim = 4;
  tc.joint_count = 10;
  tc.keypoint_count = 7;
  tc.seed = 99;
  const TemplateModel tpl = make_toy_template(tc);

  const fs::path path = temp_dir() / "template_roundtrip.bin";
  save_template(path.string(), tpl);
  const TemplateModel back = load_template(path.string());

  REQUIRE(back.tree.parent_of == tpl.tree.parent_of);
  REQUIRE((back.template_vertices.array() == tpl.template_vertices.array()).all());
  REQUIRE((back.shape_basis.array() == tpl.shape_basis.array()).all());
  REQUIRE((back.skin_weights.array() == tpl.skin_weights.array()).all());
  REQUIRE((back.joint_regressor.array() == tpl.joint_regressor.array()).all());
  REQUIRE((back.keypoint_regressor.array() == tpl.keypoint_regressor.array()).all());
  REQUIRE((back.faces.array() == tpl.faces.array()).all());

  // Saving the reloaded model reproduces the file byte for byte.
  const fs::path path2 = temp_dir() / "template_roundtrip2.bin";
  save_template(path2.string(), back);
  REQUIRE(read_file_bytes(path2) == read_file_bytes(path));

  const std::string bytes = read_file_bytes(path);
  const fs::path truncated = temp_dir() / "template_truncated.bin";
  write_file_bytes(truncated, bytes.substr(0, bytes.size() / 2));
  REQUIRE_THROWS_AS(load_template(truncated.string()), io_error);

  const fs::path bad_magic = temp_dir() / "template_badmagic.bin";
  std::string corrupted = bytes;
  corrupted[0] = 'X';
  write_file_bytes(bad_magic, corrupted);
  REQUIRE_THROWS_AS(load_template(bad_magic.string()), io_error);
}

TEST_CASE("weight binaries round trip to bit-identical decodes") {
  DecoderConfig cfg;
  cfg.instance_slots = 2;
  cfg.params_tokens = 2;
  cfg.box_tokens = 1;
  cfg.kp2d_tokens = 2;
  cfg.kp3d_tokens = 2;
  cfg.prompt_tokens = 2;
  cfg.token_dim = 8;
  cfg.layers = 2;
  cfg.attention_dim = 8;
  cfg.heads = 2;
  cfg.feature_height = 2;
  cfg.feature_width = 2;
  cfg.feature_channels = 3;
  cfg.image_height = 4;
  cfg.image_width = 4;
  const DecoderWeights w = make_random_weights(cfg, 3, 4, 2, 3, 55);

  const fs::path path = temp_dir() / "weights_roundtrip.bin";
  save_weights(path.string(), w);
  const DecoderWeights back = load_weights(path.string());

  REQUIRE(back.prompt_keypoints == w.prompt_keypoints);
  REQUIRE(back.output_keypoints == w.output_keypoints);
  REQUIRE(back.shape_dim == w.shape_dim);
  REQUIRE(back.joint_count == w.joint_count);
  REQUIRE(back.attention.size() == w.attention.size());
  for (size_t l = 0; l < w.attention.size(); ++l) {
    REQUIRE((back.attention[l].w_query.array() == w.attention[l].w_query.array()).all());
    REQUIRE((back.attention[l].w_key.array() == w.attention[l].w_key.array()).all());
    REQUIRE((back.attention[l].w_value.array() == w.attention[l].w_value.array()).all());
  }
  REQUIRE((back.feedback.phi_pos.array() == w.feedback.phi_pos.array()).all());
  REQUIRE((back.feedback.phi_feat.array() == w.feedback.phi_feat.array()).all());
  REQUIRE((back.feedback.psi_pos.array() == w.feedback.psi_pos.array()).all());
  REQUIRE((back.readout.params_head.array() == w.readout.params_head.array()).all());
  REQUIRE((back.readout.box_head.array() == w.readout.box_head.array()).all());
  REQUIRE((back.readout.kp2d_head.array() == w.readout.kp2d_head.array()).all());
  REQUIRE((back.readout.kp3d_head.array() == w.readout.kp3d_head.array()).all());
  REQUIRE((back.prompt_encoder.kp_encoder.array() == w.prompt_encoder.kp_encoder.array()).all());
  REQUIRE((back.prompt_encoder.mask_encoder.array() ==
           w.prompt_encoder.mask_encoder.array()).all());
  REQUIRE((back.prompt_encoder.kp_placeholder.array() ==
           w.prompt_encoder.kp_placeholder.array()).all());
  REQUIRE((back.prompt_encoder.mask_placeholder.array() ==
           w.prompt_encoder.mask_placeholder.array()).all());

  std::vector<double> img(4 * 4 * 3);
  for (size_t i = 0; i < img.size(); ++i) img[i] = 0.01 * static_cast<double>(i % 53);
  PromptSet prompts;
  prompts.has_keypoints = true;
  PromptSet::KeypointPrompt kp;
  kp.coords.resize(3, 2);
  kp.coords << 0.1, 0.2, 0.5, 0.5, 0.8, 0.9;
  kp.valid = {1, 1, 0};
  prompts.keypoints.push_back(kp);
  const std::vector<InstanceReadout> ra = decode(img, prompts, w, 17);
  const std::vector<InstanceReadout> rb = decode(img, prompts, back, 17);
  REQUIRE(ra.size() == rb.size());
  for (size_t i = 0; i < ra.size(); ++i) {
    REQUIRE(ra[i].confidence == rb[i].confidence);
    REQUIRE(ra[i].bbox.cx == rb[i].bbox.cx);
    REQUIRE((ra[i].keypoints2d.array() == rb[i].keypoints2d.array()).all());
    REQUIRE((ra[i].keypoints3d.array() == rb[i].keypoints3d.array()).all());
    REQUIRE((ra[i].shape.beta.array() == rb[i].shape.beta.array()).all());
    REQUIRE((ra[i].pose.theta.array() == rb[i].pose.theta.array()).all());
  }

  const std::string bytes = read_file_bytes(path);
  const fs::path truncated = temp_dir() / "weights_truncated.bin";
  write_file_bytes(truncated, bytes.substr(0, bytes.size() - 16));
  REQUIRE_THROWS_AS(load_weights(truncated.string()), io_error);

  const fs::path bad_magic = temp_dir() / "weights_badmagic.bin";
  std::string corrupted = bytes;
  corrupted[3] = '?';
  write_file_bytes(bad_magic, corrupted);
  REQUIRE_THROWS_AS(load_weights(bad_magic.string()), io_error);
}
