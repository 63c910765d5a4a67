#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "artikit/core.hpp"
#include "artikit/diffusion.hpp"
#include "artikit/error.hpp"
#include "artikit/graph.hpp"
#include "artikit/io.hpp"
#include "artikit/metrics.hpp"
#include "artikit/provider.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace artikit;

namespace {

// ---- config file -------------------------------------------------------------

struct CliConfig {
  IDConfig metrics;
  int por_resolution = 64;
  DenoiserConfig denoiser;
  TrainConfig train;
  HttpProviderConfig provider;
};

[[noreturn]] void config_fail(const std::string& path, const std::string& what) {
  throw ParseError("config " + path + ": " + what);
}

void check_keys(const json& node, const std::string& path,
                const std::vector<std::string>& allowed) {
  if (!node.is_object()) config_fail(path, "expected an object");
  for (const auto& item : node.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      config_fail(path + "." + item.key(), "unknown key");
  }
}

int config_int(const json& node, const std::string& key, int fallback,
               const std::string& path) {
  if (!node.contains(key)) return fallback;
  if (!node[key].is_number_integer()) config_fail(path + "." + key, "expected an integer");
  return node[key].get<int>();
}

double config_double(const json& node, const std::string& key, double fallback,
                     const std::string& path) {
  if (!node.contains(key)) return fallback;
  if (!node[key].is_number()) config_fail(path + "." + key, "expected a number");
  return node[key].get<double>();
}

bool config_bool(const json& node, const std::string& key, bool fallback,
                 const std::string& path) {
  if (!node.contains(key)) return fallback;
  if (!node[key].is_boolean()) config_fail(path + "." + key, "expected a boolean");
  return node[key].get<bool>();
}

std::string config_string(const json& node, const std::string& key,
                          const std::string& fallback, const std::string& path) {
  if (!node.contains(key)) return fallback;
  if (!node[key].is_string()) config_fail(path + "." + key, "expected a string");
  return node[key].get<std::string>();
}

std::uint64_t config_seed(const json& node, const std::string& key,
                          std::uint64_t fallback, const std::string& path) {
  if (!node.contains(key)) return fallback;
  if (!node[key].is_number_unsigned() && !node[key].is_number_integer())
    config_fail(path + "." + key, "expected an integer");
  return node[key].get<std::uint64_t>();
}

NoisingMode parse_mode(const std::string& name) {
  if (name == "ddpm") return NoisingMode::Ddpm;
  if (name == "interp") return NoisingMode::Interp;
  throw ParameterError("unknown noising mode '" + name +
                       "', expected ddpm or interp");
}

SampleStrategy parse_strategy(const std::string& name) {
  if (name == "uniform") return SampleStrategy::Uniform;
  if (name == "stratified") return SampleStrategy::Stratified;
  if (name == "endpoints") return SampleStrategy::Endpoints;
  throw ParameterError("unknown sampling strategy '" + name +
                       "', expected uniform, stratified or endpoints");
}

CliConfig load_cli_config(const std::string& path) {
  CliConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
  check_keys(doc, "$", {"metrics", "denoiser", "train", "provider"});

  if (doc.contains("metrics")) {
    const json& m = doc["metrics"];
    check_keys(m, "$.metrics",
               {"pose_samples", "points_per_object", "orientations", "seed",
                "cache_dir", "por_resolution"});
    cfg.metrics.pose_samples =
        config_int(m, "pose_samples", cfg.metrics.pose_samples, "$.metrics");
    cfg.metrics.points_per_object = config_int(
        m, "points_per_object", cfg.metrics.points_per_object, "$.metrics");
    cfg.metrics.seed = config_seed(m, "seed", cfg.metrics.seed, "$.metrics");
    cfg.metrics.cache_dir =
        config_string(m, "cache_dir", cfg.metrics.cache_dir, "$.metrics");
    cfg.por_resolution =
        config_int(m, "por_resolution", cfg.por_resolution, "$.metrics");
    std::string orient =
        config_string(m, "orientations", "identity", "$.metrics");
    if (orient == "identity")
      cfg.metrics.orientation_set = {Eigen::Matrix3d::Identity()};
    else if (orient == "yaw-quarter-turns")
      cfg.metrics.orientation_set = yaw_quarter_turns();
    else
      config_fail("$.metrics.orientations",
                  "unknown value '" + orient +
                      "', expected identity or yaw-quarter-turns");
  }
  if (doc.contains("denoiser")) {
    const json& d = doc["denoiser"];
    check_keys(d, "$.denoiser",
               {"d_model", "n_heads", "n_layers", "latent_dim", "n_experts",
                "top_k", "expert_hidden", "cond_dim", "mask_hops", "seed",
                "routing_seed"});
    DenoiserConfig& dc = cfg.denoiser;
    dc.d_model = config_int(d, "d_model", dc.d_model, "$.denoiser");
    dc.n_heads = config_int(d, "n_heads", dc.n_heads, "$.denoiser");
    dc.n_layers = config_int(d, "n_layers", dc.n_layers, "$.denoiser");
    dc.latent_dim = config_int(d, "latent_dim", dc.latent_dim, "$.denoiser");
    dc.n_experts = config_int(d, "n_experts", dc.n_experts, "$.denoiser");
    dc.top_k = config_int(d, "top_k", dc.top_k, "$.denoiser");
    dc.expert_hidden =
        config_int(d, "expert_hidden", dc.expert_hidden, "$.denoiser");
    dc.cond_dim = config_int(d, "cond_dim", dc.cond_dim, "$.denoiser");
    dc.mask_hops = config_int(d, "mask_hops", dc.mask_hops, "$.denoiser");
    dc.seed = config_seed(d, "seed", dc.seed, "$.denoiser");
    dc.routing_seed =
        config_seed(d, "routing_seed", dc.routing_seed, "$.denoiser");
  }
  if (doc.contains("train")) {
    const json& t = doc["train"];
    check_keys(t, "$.train",
               {"steps", "learning_rate", "clip_norm", "seed", "mode",
                "shuffle_parts", "resample_states", "noise_draws"});
    TrainConfig& tc = cfg.train;
    tc.steps = config_int(t, "steps", tc.steps, "$.train");
    tc.learning_rate =
        config_double(t, "learning_rate", tc.learning_rate, "$.train");
    tc.clip_norm = config_double(t, "clip_norm", tc.clip_norm, "$.train");
    tc.seed = config_seed(t, "seed", tc.seed, "$.train");
    tc.mode = parse_mode(config_string(t, "mode", "ddpm", "$.train"));
    tc.shuffle_parts =
        config_bool(t, "shuffle_parts", tc.shuffle_parts, "$.train");
    tc.resample_states =
        config_bool(t, "resample_states", tc.resample_states, "$.train");
    tc.noise_draws = config_int(t, "noise_draws", tc.noise_draws, "$.train");
  }
  if (doc.contains("provider")) {
    const json& p = doc["provider"];
    check_keys(p, "$.provider",
               {"endpoint", "model", "timeout_seconds", "max_retries",
                "accepts_image"});
    HttpProviderConfig& pc = cfg.provider;
    pc.endpoint_url = config_string(p, "endpoint", pc.endpoint_url, "$.provider");
    pc.model = config_string(p, "model", pc.model, "$.provider");
    pc.timeout_seconds =
        config_int(p, "timeout_seconds", pc.timeout_seconds, "$.provider");
    pc.max_retries = config_int(p, "max_retries", pc.max_retries, "$.provider");
    pc.accepts_image =
        config_bool(p, "accepts_image", pc.accepts_image, "$.provider");
  }
  return cfg;
}

// ---- shared helpers ------------------------------------------------------------

std::vector<fs::path> list_object_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("no such directory: '" + dir + "'");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".akj")
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

// ---- commands -------------------------------------------------------------------

void cmd_ingest(const std::string& in, const std::string& out) {
  ObjectBundle bundle = parse_mobility_urdf(in);
  fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_object_bundle(bundle.object, bundle.meshes, out);
  std::cout << "wrote " << out << " (" << bundle.object.size() << " parts)\n";
}

void cmd_sample_states(const std::string& obj_path, int m, std::uint64_t seed,
                       const std::string& strategy_name,
                       const std::string& out_dir) {
  if (m < 1) throw ParameterError("--m must be at least 1");
  SampleStrategy strategy = parse_strategy(strategy_name);
  ObjectBundle bundle = load_object_bundle(obj_path);
  const ArticulatedObject& obj = bundle.object;
  std::vector<StateVector> states = sample_states(obj, m, seed, strategy);

  fs::create_directories(out_dir);
  json manifest;
  manifest["source"] = obj_path;
  manifest["seed"] = seed;
  manifest["strategy"] = strategy_name;
  manifest["count"] = m;
  json instances = json::array();

  for (int k = 0; k < m; ++k) {
    PosedInstance instance = pose_object(
        obj, states[static_cast<std::size_t>(k)],
        bundle.meshes.empty() ? nullptr : &bundle.meshes);
    // bake the pose: world OBBs and meshes, joints carried along by the
    // parent frame, sampled state recorded on each part
    ArticulatedObject baked = obj;
    MeshStore baked_meshes;
    for (std::size_t i = 0; i < instance.parts.size(); ++i) {
      const PosedPart& posed = instance.parts[i];
      PartNode& part = baked.part_by_id(posed.part_id);
      const RigidTransform parent_world =
          part.parent_id == kRootParent
              ? RigidTransform::identity()
              : instance.parts[static_cast<std::size_t>(part.parent_id)].world;
      part.obb = posed.obb;
      part.joint.origin = parent_world.apply(part.joint.origin);
      part.joint.direction = parent_world.rotation * part.joint.direction;
      part.state = instance.states[static_cast<std::size_t>(i)];
      if (posed.mesh) {
        std::string ref = "meshes/instance" + std::to_string(k) + "/part" +
                          std::to_string(posed.part_id) + ".obj";
        baked_meshes[ref] = *posed.mesh;
        part.mesh_ref = ref;
      }
    }
    std::string file = "instance" + std::to_string(k) + ".akj";
    save_object_bundle(baked, baked_meshes, (fs::path(out_dir) / file).string());
    json entry;
    entry["file"] = file;
    entry["states"] = instance.states;
    instances.push_back(std::move(entry));
  }
  manifest["instances"] = std::move(instances);
  write_text_file((fs::path(out_dir) / "manifest.json").string(),
                  manifest.dump(2) + "\n");
  std::cout << "wrote " << m << " instances to " << out_dir << "\n";
}

void cmd_evaluate(const std::string& gen_dir, const std::string& ref_dir,
                  const std::string& config_path, const std::string& out) {
  CliConfig cfg = load_cli_config(config_path);
  std::vector<ArticulatedObject> gen, ref;
  std::vector<MeshStore> gen_meshes, ref_meshes;
  for (const auto& path : list_object_files(gen_dir)) {
    ObjectBundle b = load_object_bundle(path.string());
    gen.push_back(std::move(b.object));
    gen_meshes.push_back(std::move(b.meshes));
  }
  for (const auto& path : list_object_files(ref_dir)) {
    ObjectBundle b = load_object_bundle(path.string());
    ref.push_back(std::move(b.object));
    ref_meshes.push_back(std::move(b.meshes));
  }
  if (gen.empty()) throw ParameterError("no objects in '" + gen_dir + "'");
  if (ref.empty()) throw ParameterError("no objects in '" + ref_dir + "'");

  MetricsReport report = evaluate_sets(gen, ref, cfg.metrics,
                                       cfg.por_resolution, &gen_meshes,
                                       &ref_meshes);
  fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_report(report, out);
  std::printf("POR %.6f MMD %.6f COV %.6f 1-NNA %.6f\n", report.por_mean,
              report.mmd, report.cov, report.one_nna);
}

void cmd_train_toy(const std::string& data_dir, const std::string& out,
                   const std::string& trace_path, const std::string& config_path,
                   const std::optional<int>& steps,
                   const std::optional<double>& lr,
                   const std::optional<std::uint64_t>& seed,
                   const std::optional<std::string>& mode) {
  CliConfig cfg = load_cli_config(config_path);
  TrainConfig train = cfg.train;
  if (steps) train.steps = *steps;
  if (lr) train.learning_rate = *lr;
  if (seed) train.seed = *seed;
  if (mode) train.mode = parse_mode(*mode);
  train.checkpoint_path = out;

  std::vector<ArticulatedObject> dataset;
  for (const auto& path : list_object_files(data_dir))
    dataset.push_back(load_object(path.string()));
  if (dataset.empty()) throw ParameterError("no objects in '" + data_dir + "'");

  fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  NoiseSchedule sched = make_noise_schedule();
  TrainResult result = train_toy(dataset, {}, cfg.denoiser, train, sched);
  if (!trace_path.empty()) write_loss_trace(result.trace, trace_path);
  std::printf("trained %d steps, final loss %.6f, smoothed %.6f\n",
              train.steps, result.trace.back().loss,
              smoothed_loss(result.trace));
}

void cmd_generate(const std::string& ckpt, const std::string& graph_path,
                  const std::string& out, std::uint64_t seed,
                  const std::string& features_path,
                  const std::string& category) {
  Denoiser model = load_checkpoint(ckpt);
  ConnectivityGraph g = parse_structure_response(read_text_file(graph_path));
  Eigen::MatrixXd cond;
  if (!features_path.empty()) cond = load_features(features_path);
  NoiseSchedule sched = make_noise_schedule();
  ArticulatedObject obj = sample_object(model, g, sched, seed, cond, category);
  fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_object(obj, out);
  std::cout << "wrote " << out << " (" << obj.size() << " parts)\n";
}

void cmd_infer_graph(const std::string& condition, const std::string& image,
                     const std::string& prompts_dir, const std::string& out,
                     const std::string& mock_fixture,
                     const std::string& config_path,
                     const std::string& endpoint, const std::string& model) {
  if (condition.empty() == image.empty())
    throw ParameterError("pass exactly one of --condition or --image");
  ConditionInput input;
  input.kind = condition.empty() ? ConditionInput::Kind::ImagePath
                                 : ConditionInput::Kind::Text;
  input.value = condition.empty() ? image : condition;

  PromptSet prompts = load_prompt_set(prompts_dir);
  ConnectivityGraph g;
  if (!mock_fixture.empty()) {
    MockProvider provider(mock_fixture);
    g = infer_structure(provider, input, prompts);
  } else {
    CliConfig cfg = load_cli_config(config_path);
    HttpProviderConfig pc = cfg.provider;
    if (!endpoint.empty()) pc.endpoint_url = endpoint;
    if (!model.empty()) pc.model = model;
    if (pc.endpoint_url.empty())
      throw ParameterError("no provider endpoint; pass --endpoint, --mock or "
                           "a config with provider.endpoint");
    HttpProvider provider(pc);
    g = infer_structure(provider, input, prompts);
  }
  fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_text_file(out, serialize_structure_graph(g) + "\n");
  std::cout << "wrote " << out << " (" << g.nodes.size() << " parts)\n";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ProviderError*>(&e)) return 4;
  if (dynamic_cast<const IoError*>(&e)) return 3;
  if (dynamic_cast<const LookupError*>(&e)) return 3;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"articulated object toolkit"};
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "URDF directory to canonical object");
  std::string ingest_in, ingest_out;
  ingest->add_option("--in", ingest_in, "URDF directory or file")->required();
  ingest->add_option("--out", ingest_out, "output .akj path")->required();

  auto* sample = app.add_subcommand("sample-states", "pose sampled joint states");
  std::string sample_obj, sample_strategy = "uniform", sample_out;
  int sample_m = 10;
  std::uint64_t sample_seed = 0;
  sample->add_option("--obj", sample_obj, "object .akj path")->required();
  sample->add_option("--m", sample_m, "number of instances");
  sample->add_option("--seed", sample_seed, "random seed");
  sample->add_option("--strategy", sample_strategy,
                     "uniform | stratified | endpoints");
  sample->add_option("--out", sample_out, "output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "compare generated and reference sets");
  std::string eval_gen, eval_ref, eval_config, eval_out;
  evaluate->add_option("--gen", eval_gen, "generated objects directory")->required();
  evaluate->add_option("--ref", eval_ref, "reference objects directory")->required();
  evaluate->add_option("--config", eval_config, "config file");
  evaluate->add_option("--out", eval_out, "report output path")->required();

  auto* train = app.add_subcommand("train-toy", "train the toy denoiser");
  std::string train_data, train_out, train_trace, train_config;
  std::optional<int> train_steps;
  std::optional<double> train_lr;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> train_mode;
  train->add_option("--data", train_data, "training objects directory")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--trace", train_trace, "loss trace CSV path");
  train->add_option("--config", train_config, "config file");
  train->add_option("--steps", train_steps, "SGD steps");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--seed", train_seed, "random seed");
  train->add_option("--mode", train_mode, "ddpm | interp");

  auto* generate = app.add_subcommand("generate", "sample an object from a checkpoint");
  std::string gen_ckpt, gen_graph, gen_out, gen_features, gen_category = "generated";
  std::uint64_t gen_seed = 0;
  generate->add_option("--ckpt", gen_ckpt, "checkpoint path")->required();
  generate->add_option("--graph", gen_graph, "structure graph file")->required();
  generate->add_option("--out", gen_out, "output .akj path")->required();
  generate->add_option("--seed", gen_seed, "random seed");
  generate->add_option("--features", gen_features, "condition feature file");
  generate->add_option("--category", gen_category, "category label");

  auto* infer = app.add_subcommand("infer-graph", "infer a structure graph");
  std::string infer_condition, infer_image, infer_prompts = "prompts";
  std::string infer_out, infer_mock, infer_config, infer_endpoint, infer_model;
  infer->add_option("--condition", infer_condition, "text condition");
  infer->add_option("--image", infer_image, "image path condition");
  infer->add_option("--prompts", infer_prompts, "prompt template directory");
  infer->add_option("--out", infer_out, "graph output path")->required();
  infer->add_option("--mock", infer_mock, "mock provider fixture file");
  infer->add_option("--config", infer_config, "config file");
  infer->add_option("--endpoint", infer_endpoint, "chat completion endpoint");
  infer->add_option("--model", infer_model, "provider model name");

  try {
    app.parse(argc, argv);
    if (ingest->parsed()) cmd_ingest(ingest_in, ingest_out);
    if (sample->parsed())
      cmd_sample_states(sample_obj, sample_m, sample_seed, sample_strategy,
                        sample_out);
    if (evaluate->parsed()) cmd_evaluate(eval_gen, eval_ref, eval_config, eval_out);
    if (train->parsed())
      cmd_train_toy(train_data, train_out, train_trace, train_config,
                    train_steps, train_lr, train_seed, train_mode);
    if (generate->parsed())
      cmd_generate(gen_ckpt, gen_graph, gen_out, gen_seed, gen_features,
                   gen_category);
    if (infer->parsed())
      cmd_infer_graph(infer_condition, infer_image, infer_prompts, infer_out,
                      infer_mock, infer_config, infer_endpoint, infer_model);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
