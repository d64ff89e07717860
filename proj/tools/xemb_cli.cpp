// xemb command line: dataset generation, backbone pretraining, training,
// evaluation, ablation, cross-embodiment transfer, the SE(3) extraction
// pipeline, and the built-in check suite. Each subcommand reads a key=value
// config file with --set overrides and prints a one-line JSON summary to
// stdout; artifacts go to --out. Exit codes: 0 success, 1 runtime failure,
// 2 usage or config error.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "xemb/accept.hpp"
#include "xemb/config.hpp"
#include "xemb/eval.hpp"
#include "xemb/generator.hpp"
#include "xemb/geometry.hpp"
#include "xemb/pgm.hpp"
#include "xemb/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace xemb;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

harness::Config load_config(const CommonArgs& args) {
  harness::Config cfg = args.config_path.empty()
                            ? harness::Config{}
                            : harness::Config::parse_file(args.config_path);
  for (const auto& o : args.overrides) cfg.apply_override(o);
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs* args, bool need_out) {
  cmd->add_option("--config", args->config_path, "key = value config file");
  cmd->add_option("--set", args->overrides,
                  "override a config key, e.g. --set steps=100");
  auto* out =
      cmd->add_option("--out", args->out_dir, "output artifact directory");
  if (need_out) out->required();
}

synth::DatasetConfig dataset_config(const harness::Config& cfg) {
  synth::DatasetConfig d;
  d.seeds_per_pair =
      static_cast<int>(cfg.get_int_or("seeds_per_pair", d.seeds_per_pair));
  d.master_seed = cfg.get_u64_or("master_seed", d.master_seed);
  d.train_frac = cfg.get_double_or("train_frac", d.train_frac);
  d.val_frac = cfg.get_double_or("val_frac", d.val_frac);
  d.render.frames = static_cast<int>(cfg.get_int_or("frames", d.render.frames));
  d.render.height = static_cast<int>(cfg.get_int_or("height", d.render.height));
  d.render.width = static_cast<int>(cfg.get_int_or("width", d.render.width));
  d.render.backgrounds =
      static_cast<int>(cfg.get_int_or("backgrounds", d.render.backgrounds));
  d.render.vocab_per_class = static_cast<int>(
      cfg.get_int_or("vocab_per_class", d.render.vocab_per_class));
  return d;
}

gen::GeneratorConfig generator_config(const harness::Config& cfg,
                                      const synth::RenderConfig& r) {
  gen::GeneratorConfig g;
  g.frames = r.frames;
  g.height = r.height;
  g.width = r.width;
  g.channels = r.channels;
  g.patch = static_cast<int>(cfg.get_int_or("patch", g.patch));
  g.d_model = static_cast<int>(cfg.get_int_or("d_model", g.d_model));
  g.heads = static_cast<int>(cfg.get_int_or("heads", g.heads));
  g.layers = static_cast<int>(cfg.get_int_or("layers", g.layers));
  g.adapter_layers =
      static_cast<int>(cfg.get_int_or("adapter_layers", g.layers));
  g.mlp_hidden = static_cast<int>(cfg.get_int_or("mlp_hidden", g.mlp_hidden));
  g.d_z = static_cast<int>(cfg.get_int_or("d_z", g.d_z));
  g.bg_tokens = static_cast<int>(cfg.get_int_or("bg_tokens", g.bg_tokens));
  g.time_dim = static_cast<int>(cfg.get_int_or("time_dim", g.time_dim));
  return g;
}

harness::EvalOptions eval_options(const harness::Config& cfg) {
  harness::EvalOptions o;
  o.kmeans_restarts =
      static_cast<int>(cfg.get_int_or("kmeans_restarts", o.kmeans_restarts));
  o.club_fit_steps =
      static_cast<int>(cfg.get_int_or("club_fit_steps", o.club_fit_steps));
  o.club_fit_lr = cfg.get_double_or("club_fit_lr", o.club_fit_lr);
  o.sampler_steps =
      static_cast<int>(cfg.get_int_or("eval_sampler_steps", o.sampler_steps));
  o.max_sources =
      static_cast<int>(cfg.get_int_or("eval_max_sources", o.max_sources));
  o.seed = cfg.get_u64_or("eval_seed", o.seed);
  return o;
}

synth::OracleClassifier obtain_oracle(const harness::Config& cfg,
                                      const synth::Dataset& ds,
                                      const std::string& out_dir) {
  if (cfg.has("oracle_path"))
    return synth::OracleClassifier::load(cfg.get("oracle_path"));
  synth::OracleConfig ocfg;
  ocfg.seed = cfg.get_u64_or("oracle_seed", ocfg.seed);
  ocfg.steps = static_cast<int>(cfg.get_int_or("oracle_steps", ocfg.steps));
  auto oracle = synth::OracleClassifier::train(ds, ocfg);
  if (!out_dir.empty())
    oracle.save((fs::path(out_dir) / "oracle.bin").string());
  return oracle;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
}

void write_projection_csv(const fs::path& path,
                          const std::vector<std::array<double, 4>>& rows) {
  std::ostringstream csv;
  csv << "x,y,task_label,embodiment_label\n";
  for (const auto& r : rows) {
    char buf[160];
    snprintf(buf, sizeof(buf), "%.17g,%.17g,%d,%d\n", r[0], r[1],
             static_cast<int>(r[2]), static_cast<int>(r[3]));
    csv << buf;
  }
  write_text(path, csv.str());
}

json disentanglement_json(const harness::DisentanglementReport& rep) {
  json j;
  j["mean_abs_cross_correlation"] = rep.mean_abs_cross_correlation;
  j["task_purity"] = rep.task_purity;
  j["emb_purity"] = rep.emb_purity;
  j["task_silhouette"] = rep.task_silhouette;
  j["emb_silhouette"] = rep.emb_silhouette;
  j["club_mi"] = rep.club_mi;
  j["degenerate_task"] = rep.degenerate_task;
  j["degenerate_emb"] = rep.degenerate_emb;
  return j;
}

json generation_json(const harness::GenerationReport& rep) {
  json j;
  j["psnr"] = rep.psnr;
  j["ssim"] = rep.ssim;
  j["mmd_real_generated"] = rep.mmd_real_generated;
  j["transfer_embodiment_accuracy"] = rep.transfer_embodiment_accuracy;
  j["transfer_task_accuracy"] = rep.transfer_task_accuracy;
  j["reconstructions"] = rep.reconstructions;
  j["transfer_pairs"] = rep.transfer_pairs;
  return j;
}

int cmd_gen_data(const CommonArgs& args) {
  auto cfg = load_config(args);
  auto dcfg = dataset_config(cfg);
  auto ds = synth::build_dataset(dcfg);
  synth::write_dataset(ds, args.out_dir);
  // canonical embodiment cards as PGM alongside the records
  fs::create_directories(fs::path(args.out_dir) / "cards");
  for (int e = 0; e < synth::kNumEmbodiments; ++e) {
    synth::EmbodimentSpec spec;
    spec.embodiment_id = static_cast<synth::Embodiment>(e);
    spec.scale = dcfg.render.ee_scale;
    auto card = synth::embodiment_card(spec, dcfg.render);
    write_pgm((fs::path(args.out_dir) / "cards" /
               (std::string(synth::embodiment_name(spec.embodiment_id)) +
                ".pgm"))
                  .string(),
              card, dcfg.render.height, dcfg.render.width);
  }
  json j;
  j["command"] = "gen-data";
  j["out"] = args.out_dir;
  j["count"] = ds.samples.size();
  j["train"] = ds.train_idx.size();
  j["val"] = ds.val_idx.size();
  j["test"] = ds.test_idx.size();
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& args) {
  auto cfg = load_config(args);
  auto ds = synth::load_dataset(cfg.get("dataset"));
  auto gcfg = generator_config(cfg, ds.config.render);
  gen::PretrainConfig pcfg;
  pcfg.max_steps =
      static_cast<int>(cfg.get_int_or("pretrain_steps", pcfg.max_steps));
  pcfg.batch = static_cast<int>(cfg.get_int_or("pretrain_batch", pcfg.batch));
  pcfg.lr = cfg.get_double_or("pretrain_lr", pcfg.lr);
  pcfg.eval_every =
      static_cast<int>(cfg.get_int_or("pretrain_eval_every", pcfg.eval_every));
  pcfg.seed = cfg.get_u64_or("pretrain_seed", pcfg.seed);
  auto result = gen::pretrain_backbone(ds, gcfg, pcfg);
  fs::create_directories(args.out_dir);
  const auto path = fs::path(args.out_dir) / "backbone.ckpt";
  gen::save_backbone(path.string(), result.backbone, gcfg);
  json j;
  j["command"] = "pretrain-backbone";
  j["backbone"] = path.string();
  j["steps_run"] = result.steps_run;
  j["val_losses"] = result.val_losses;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  auto cfg = load_config(args);
  auto ds = synth::load_dataset(cfg.get("dataset"));
  auto [backbone, gcfg] = gen::load_backbone(cfg.get("backbone"));
  auto st = harness::TrainSettings::from_config(cfg);
  harness::Trainer trainer(ds, std::move(backbone), gcfg, st);
  fs::create_directories(args.out_dir);
  if (cfg.has("resume")) trainer.load_checkpoint(cfg.get("resume"));

  std::ofstream csv(fs::path(args.out_dir) / "loss.csv",
                    cfg.has("resume") ? std::ios::app : std::ios::out);
  if (!cfg.has("resume")) csv << harness::Trainer::csv_header();
  std::ofstream hashes(fs::path(args.out_dir) / "batch_hashes.txt",
                       cfg.has("resume") ? std::ios::app : std::ios::out);
  trainer.run(st.steps, &csv, &hashes);
  csv.flush();
  const auto ckpt = fs::path(args.out_dir) / "checkpoint.ckpt";
  trainer.save_checkpoint(ckpt.string());
  json j;
  j["command"] = "train";
  j["checkpoint"] = ckpt.string();
  j["steps"] = trainer.step_count();
  std::cout << j.dump() << "\n";
  return 0;
}

// reconstructs a trainer around a checkpoint
harness::Trainer restore_trainer(const harness::Config& cfg,
                                 const synth::Dataset& ds) {
  auto [backbone, gcfg] = gen::load_backbone(cfg.get("backbone"));
  const std::string ckpt = cfg.get("checkpoint");
  auto st = harness::Trainer::peek_settings(ckpt);
  harness::Trainer trainer(ds, std::move(backbone), gcfg, st);
  trainer.load_checkpoint(ckpt);
  return trainer;
}

int cmd_eval(const CommonArgs& args) {
  auto cfg = load_config(args);
  auto ds = synth::load_dataset(cfg.get("dataset"));
  auto trainer = restore_trainer(cfg, ds);
  auto opt = eval_options(cfg);
  fs::create_directories(args.out_dir);

  auto dis = harness::eval_disentanglement(trainer, ds.val_idx, opt);
  auto oracle = obtain_oracle(cfg, ds, args.out_dir);
  auto genrep = harness::eval_generation(trainer, ds.val_idx, oracle, opt);

  json metrics;
  metrics["disentanglement"] = disentanglement_json(dis);
  metrics["generation"] = generation_json(genrep);
  metrics["oracle_task_accuracy"] = oracle.task_accuracy();
  metrics["oracle_embodiment_accuracy"] = oracle.embodiment_accuracy();
  write_text(fs::path(args.out_dir) / "metrics.json", metrics.dump(2) + "\n");
  write_projection_csv(fs::path(args.out_dir) / "task_projection.csv",
                       dis.task_projection);
  write_projection_csv(fs::path(args.out_dir) / "emb_projection.csv",
                       dis.emb_projection);
  // full correlation matrix as CSV
  {
    std::ostringstream csv;
    const int dims = 2 * dis.d_z;
    for (int i = 0; i < dims; ++i) {
      for (int j = 0; j < dims; ++j) {
        if (j) csv << ",";
        char buf[32];
        snprintf(buf, sizeof(buf), "%.10g",
                 dis.correlation[static_cast<size_t>(i) * dims + j]);
        csv << buf;
      }
      csv << "\n";
    }
    write_text(fs::path(args.out_dir) / "correlation.csv", csv.str());
  }
  json j;
  j["command"] = "eval";
  j["out"] = args.out_dir;
  j["metrics"] = metrics;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  auto cfg = load_config(args);
  auto ds = synth::load_dataset(cfg.get("dataset"));
  auto [backbone, gcfg] = gen::load_backbone(cfg.get("backbone"));
  auto st = harness::TrainSettings::from_config(cfg);
  auto opt = eval_options(cfg);
  auto results = harness::run_ablation_suite(
      ds, backbone, gcfg, st, harness::standard_ablation_arms(), opt);
  fs::create_directories(args.out_dir);
  json arms = json::array();
  for (const auto& r : results) arms.push_back(json::parse(r.to_json()));
  json j;
  j["command"] = "ablate";
  j["arms"] = arms;
  write_text(fs::path(args.out_dir) / "ablation.json", j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_transfer(const CommonArgs& args, const std::string& source_path,
                 const std::string& card_path) {
  auto cfg = load_config(args);
  auto ds = synth::load_dataset(cfg.get("dataset"));
  auto trainer = restore_trainer(cfg, ds);

  std::ifstream src_in(source_path, std::ios::binary);
  if (!src_in)
    throw std::runtime_error("cannot open source demo: " + source_path);
  auto source = synth::read_demo_record(src_in);

  auto card_img = read_pgm(card_path);
  if (card_img.height != source.height || card_img.width != source.width)
    throw std::runtime_error("card resolution mismatch: expected " +
                             std::to_string(source.width) + "x" +
                             std::to_string(source.height));

  gen::SamplerConfig scfg;
  scfg.steps = static_cast<int>(cfg.get_int_or("sampler_steps", 50));
  scfg.seed = cfg.get_u64_or("sampler_seed", 0);
  auto models = trainer.transfer_models();
  auto video = gen::compose_transfer(source, card_img.values, models, scfg);
  gen::write_video_artifacts(
      args.out_dir, video, trainer.generator_config(),
      {{"source", source_path},
       {"card", card_path},
       {"source_task", synth::task_class_name(
                           static_cast<synth::TaskClass>(source.task_label))},
       {"background_id", std::to_string(source.background_id)},
       {"seed", std::to_string(scfg.seed)},
       {"steps", std::to_string(scfg.steps)}});
  json j;
  j["command"] = "transfer";
  j["out"] = args.out_dir;
  j["frames"] = trainer.generator_config().frames;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_extract_poses(const CommonArgs& args, const std::string& depth_path,
                      const std::string& mask_path) {
  auto cfg = load_config(args);
  const double fx = cfg.get_double_or("fx", 32.0);
  const double fy = cfg.get_double_or("fy", 32.0);
  const double cx = cfg.get_double_or("cx", 16.0);
  const double cy = cfg.get_double_or("cy", 16.0);
  const int dilate = static_cast<int>(cfg.get_int_or("dilate_radius", 2));
  geom::IcpConfig icp;
  icp.trim_fraction = cfg.get_double_or("trim_fraction", icp.trim_fraction);
  icp.max_iters =
      static_cast<int>(cfg.get_int_or("icp_max_iters", icp.max_iters));
  icp.tol = cfg.get_double_or("icp_tol", icp.tol);

  // depth: magic XEMBDEP1, u32 frames/h/w, f64 data; mask: XEMBMSK1, u8 data
  std::ifstream din(depth_path, std::ios::binary);
  if (!din) throw std::runtime_error("cannot open depth file " + depth_path);
  char magic[8];
  din.read(magic, 8);
  if (std::string(magic, 8) != "XEMBDEP1")
    throw std::runtime_error("bad depth magic in " + depth_path);
  uint32_t dims[3];
  din.read(reinterpret_cast<char*>(dims), sizeof(dims));
  const int frames = static_cast<int>(dims[0]);
  const int h = static_cast<int>(dims[1]);
  const int w = static_cast<int>(dims[2]);
  std::vector<double> depth(static_cast<size_t>(frames) * h * w);
  din.read(reinterpret_cast<char*>(depth.data()),
           static_cast<std::streamsize>(depth.size() * sizeof(double)));
  if (!din) throw std::runtime_error("truncated depth file");

  std::ifstream min(mask_path, std::ios::binary);
  if (!min) throw std::runtime_error("cannot open mask file " + mask_path);
  min.read(magic, 8);
  if (std::string(magic, 8) != "XEMBMSK1")
    throw std::runtime_error("bad mask magic in " + mask_path);
  uint32_t mdims[3];
  min.read(reinterpret_cast<char*>(mdims), sizeof(mdims));
  if (mdims[0] != dims[0] || mdims[1] != dims[1] || mdims[2] != dims[2])
    throw std::runtime_error("depth/mask dimensions disagree");
  std::vector<uint8_t> mask(depth.size());
  min.read(reinterpret_cast<char*>(mask.data()),
           static_cast<std::streamsize>(mask.size()));
  if (!min) throw std::runtime_error("truncated mask file");

  std::vector<geom::PointCloud> clouds;
  for (int f = 0; f < frames; ++f) {
    geom::DepthFrame df;
    df.height = h;
    df.width = w;
    df.fx = fx;
    df.fy = fy;
    df.cx = cx;
    df.cy = cy;
    df.depth.assign(depth.begin() + static_cast<int64_t>(f) * h * w,
                    depth.begin() + static_cast<int64_t>(f + 1) * h * w);
    geom::MaskFrame mf;
    mf.height = h;
    mf.width = w;
    mf.mask.assign(mask.begin() + static_cast<int64_t>(f) * h * w,
                   mask.begin() + static_cast<int64_t>(f + 1) * h * w);
    clouds.push_back(
        geom::lift_depth_to_cloud(df, geom::dilate_mask(mf, dilate), f));
  }
  auto poses = geom::estimate_object_trajectory(clouds, icp);
  fs::create_directories(args.out_dir);
  write_text(fs::path(args.out_dir) / "poses.txt",
             geom::trajectory_to_text(poses));
  json j;
  j["command"] = "extract-poses";
  j["frames"] = frames;
  j["out"] = (fs::path(args.out_dir) / "poses.txt").string();
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_check() {
  auto results = accept::fast_criteria();
  json lines = json::array();
  for (const auto& r : results) {
    std::cout << accept::summary_line(r) << "\n";
    json item;
    item["id"] = r.id;
    item["name"] = r.name;
    item["pass"] = r.pass;
    item["documented_defect"] = r.documented_defect;
    item["seconds"] = r.seconds;
    lines.push_back(item);
  }
  const bool ok = accept::suite_acceptable(results);
  json j;
  j["command"] = "check";
  j["criteria"] = lines;
  j["acceptable"] = ok;
  std::cout << j.dump() << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disentangled cross-embodiment video generation"};
  app.require_subcommand(1);

  CommonArgs gen_args, pre_args, train_args, eval_args, ablate_args,
      transfer_args, poses_args;
  std::string source_path, card_path, depth_path, mask_path;

  auto* gen_cmd = app.add_subcommand("gen-data", "build a synthetic dataset");
  add_common(gen_cmd, &gen_args, true);
  auto* pre_cmd = app.add_subcommand("pretrain-backbone",
                                     "unconditional flow-matching pretraining");
  add_common(pre_cmd, &pre_args, true);
  auto* train_cmd = app.add_subcommand("train", "train encoders + adapter");
  add_common(train_cmd, &train_args, true);
  auto* eval_cmd =
      app.add_subcommand("eval", "disentanglement + generation metrics");
  add_common(eval_cmd, &eval_args, true);
  auto* ablate_cmd = app.add_subcommand("ablate", "train the ablation arms");
  add_common(ablate_cmd, &ablate_args, true);
  auto* transfer_cmd = app.add_subcommand(
      "transfer", "compose a source demo with a target embodiment card");
  add_common(transfer_cmd, &transfer_args, true);
  transfer_cmd->add_option("--source", source_path, "source demo record")
      ->required();
  transfer_cmd->add_option("--card", card_path, "target end-effector PGM")
      ->required();
  auto* poses_cmd = app.add_subcommand(
      "extract-poses", "trajectory extraction from depth + mask sequences");
  add_common(poses_cmd, &poses_args, true);
  poses_cmd->add_option("--depth", depth_path, "XEMBDEP1 depth sequence")
      ->required();
  poses_cmd->add_option("--mask", mask_path, "XEMBMSK1 mask sequence")
      ->required();
  auto* check_cmd =
      app.add_subcommand("check", "run the fast acceptance criteria");
  (void)check_cmd;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen_args);
    if (pre_cmd->parsed()) return cmd_pretrain(pre_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_args);
    if (transfer_cmd->parsed())
      return cmd_transfer(transfer_args, source_path, card_path);
    if (poses_cmd->parsed())
      return cmd_extract_poses(poses_args, depth_path, mask_path);
    if (check_cmd->parsed()) return cmd_check();
  } catch (const harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
