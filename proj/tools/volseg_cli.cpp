// Copyright 2026 The volseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "volseg/service.hpp"
#include "volseg/training.hpp"

namespace {

using namespace volseg;

EngineConfig config_or_default(const std::string& path) { return path.empty() ? EngineConfig{} : load_config(path); }

std::vector<LabelledVolume> load_suite(const std::string& dir, const EngineConfig& cfg) {
  return normalize_suite(read_suite(dir), cfg);
}

ModelSet models_for(const std::string& dir) {
  if (dir.empty()) throw ParameterError("--models <dir> is required (see train-all)");
  return load_all(dir);
}

void print_table(const EvalReport& rep) {
  std::printf("round  mean_dice\n");
  for (std::size_t r = 0; r < rep.mean_dice.size(); ++r) std::printf("%5zu  %.4f\n", r + 1, rep.mean_dice[r]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive volumetric segmentation engine"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Engine configuration (JSON)");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic ellipsoid/blob suite");
  std::string synth_out;
  int synth_n = 32;
  std::uint64_t synth_seed = 2026;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n-volumes", synth_n, "Number of volumes")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Suite seed");

  // train-2d
  auto* t2d = app.add_subcommand("train-2d", "Train the click interactor");
  std::string t2d_data, t2d_out;
  std::uint64_t t2d_seed = 101;
  int t2d_steps = 1200;
  bool t2d_clean = false;
  t2d->add_option("--data", t2d_data, "Suite directory")->required();
  t2d->add_option("--out", t2d_out, "Checkpoint path")->required();
  t2d->add_option("--seed", t2d_seed);
  t2d->add_option("--steps", t2d_steps);
  t2d->add_flag("--clean-prev", t2d_clean, "Feed clean ground truth as the previous mask");

  // train-prop
  auto* tprop = app.add_subcommand("train-prop", "Train the propagation model");
  std::string tprop_data, tprop_out;
  std::uint64_t tprop_seed = 102;
  int tprop_steps = 600;
  tprop->add_option("--data", tprop_data, "Suite directory")->required();
  tprop->add_option("--out", tprop_out, "Checkpoint path")->required();
  tprop->add_option("--seed", tprop_seed);
  tprop->add_option("--steps", tprop_steps);

  // build-defects
  auto* defects = app.add_subcommand("build-defects", "Build the defect-pair dataset");
  std::string def_gt, def_out, def_models;
  std::uint64_t def_seed = 103;
  defects->add_option("--gt", def_gt, "Suite directory with ground truth")->required();
  defects->add_option("--out", def_out, "Output directory")->required();
  defects->add_option("--seed", def_seed);
  defects->add_option("--models", def_models, "Directory with interactor.ckpt and propagator.ckpt for baseline pairs");

  // train-quality
  auto* tq = app.add_subcommand("train-quality", "Train the quality network on defect pairs");
  std::string tq_data, tq_out;
  std::uint64_t tq_seed = 104;
  int tq_steps = 800;
  tq->add_option("--defects", tq_data, "Defect dataset directory")->required();
  tq->add_option("--out", tq_out, "Checkpoint path")->required();
  tq->add_option("--seed", tq_seed);
  tq->add_option("--steps", tq_steps);

  // train-all
  auto* tall = app.add_subcommand("train-all", "Train all three models with the default recipe");
  std::string tall_out;
  Recipe recipe;
  tall->add_option("--out", tall_out, "Output directory")->required();
  tall->add_option("--seed", recipe.seed, "Training suite seed");
  tall->add_option("--volumes", recipe.train_volumes);
  tall->add_option("--interactor-steps", recipe.interactor_steps);
  tall->add_option("--propagator-steps", recipe.propagator_steps);
  tall->add_option("--quality-steps", recipe.quality_steps);
  bool tall_if_missing = false;
  tall->add_flag("--if-missing", tall_if_missing, "Skip training when loadable checkpoints already exist");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Simulated-user evaluation");
  std::string ev_data, ev_report, ev_models, ev_mrf = "on";
  EvalOptions ev_opt;
  bool ev_oracle = false;
  eval->add_option("--data", ev_data, "Suite directory")->required();
  eval->add_option("--models", ev_models, "Checkpoint directory")->required();
  eval->add_option("--rounds", ev_opt.rounds)->check(CLI::NonNegativeNumber);
  eval->add_option("--mrf", ev_mrf)->check(CLI::IsMember({"on", "off"}));
  eval->add_option("--seed", ev_opt.seed);
  eval->add_option("--report", ev_report, "Write the JSON report here");
  eval->add_option("--threads", ev_opt.threads);
  eval->add_flag("--oracle-scores", ev_oracle, "Score fusion with ground truth instead of the quality net");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  int port = 8080;
  std::string host = "127.0.0.1", sv_models, sv_state;
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--models", sv_models, "Checkpoint directory")->required();
  serve->add_option("--state-dir", sv_state, "Persist session logs here");

  CLI11_PARSE(app, argc, argv);

  try {
    const EngineConfig cfg = config_or_default(config_path);
    if (*synth) {
      write_synth_suite(make_synth_suite(synth_seed, synth_n), synth_out);
      std::printf("wrote %d volumes to %s\n", synth_n, synth_out.c_str());
    } else if (*t2d) {
      const auto data = load_suite(t2d_data, cfg);
      InteractorTrainConfig tc;
      tc.steps = t2d_steps;
      tc.seed = t2d_seed;
      tc.corrupt_prev = !t2d_clean;
      tc.corruption = cfg.corruption;
      InteractorConfig arch;
      arch.click_radius = cfg.click_radius;
      arch.threshold = cfg.interactor_threshold;
      auto net = train_interactor(slice_samples(data), tc, arch);
      save_interactor(t2d_out, net, t2d_seed, dataset_hash(data));
    } else if (*tprop) {
      const auto data = load_suite(tprop_data, cfg);
      PropagatorTrainConfig tc;
      tc.steps = tprop_steps;
      tc.seed = tprop_seed;
      auto model = train_propagator(train_volumes(data), tc, cfg.memory);
      save_propagator(tprop_out, model, tprop_seed, dataset_hash(data));
    } else if (*defects) {
      const auto data = load_suite(def_gt, cfg);
      std::vector<Volume> vols;
      std::vector<MaskSequence> gts;
      for (const auto& d : data) {
        vols.push_back(d.volume);
        gts.push_back(d.gt);
      }
      DefectDatasetConfig dc;
      dc.seed = def_seed;
      dc.corruption = cfg.corruption;
      std::optional<Interactor<float>> inter;
      std::optional<PropagationModel<float>> prop;
      BaselinePredictor base;
      if (!def_models.empty()) {
        inter.emplace(load_interactor(fs::path(def_models) / "interactor.ckpt"));
        prop.emplace(load_propagator(fs::path(def_models) / "propagator.ckpt"));
        base = one_round_baseline(*inter, *prop, cfg);
      }
      const auto pairs = build_defect_dataset(vols, gts, base, dc);
      save_defect_dataset(pairs, def_out);
      std::printf("wrote %zu pairs to %s\n", pairs.size(), def_out.c_str());
    } else if (*tq) {
      const auto pairs = load_defect_dataset(tq_data);
      QualityTrainConfig tc;
      tc.steps = tq_steps;
      tc.seed = tq_seed;
      QualityNetConfig arch;
      arch.tau = cfg.fusion.tau;
      arch.batch = cfg.fusion.batch;
      auto net = train_quality_net(pairs, tc, arch);
      save_quality(tq_out, net, tq_seed, defect_hash(pairs));
    } else if (*tall) {
      if (tall_if_missing) {
        try {
          load_all(tall_out);
          std::printf("checkpoints present in %s\n", tall_out.c_str());
          return 0;
        } catch (const volseg::Error&) {
        }
      }
      train_all(recipe, cfg, tall_out, stdout);
    } else if (*eval) {
      const auto data = load_suite(ev_data, cfg);
      const auto models = models_for(ev_models);
      ev_opt.mrf = ev_mrf == "on";
      ev_opt.oracle_scores = ev_oracle;
      const auto rep = evaluate(eval_cases(data),
                                make_pipeline(*models.interactor, *models.propagator, models.quality.get(),
                                              cfg.fusion.batch),
                                cfg, ev_opt);
      print_table(rep);
      if (!ev_report.empty()) io_detail::write_file(ev_report, rep.to_json().dump(2));
    } else if (*serve) {
      const auto models = models_for(sv_models);
      std::optional<fs::path> state;
      if (!sv_state.empty()) state = sv_state;
      SessionService svc(*models.interactor, *models.propagator, *models.quality, cfg, state);
      httplib::Server srv;
      svc.mount(srv);
      std::printf("listening on %s:%d\n", host.c_str(), port);
      std::fflush(stdout);
      if (!srv.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    }
  } catch (const volseg::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
