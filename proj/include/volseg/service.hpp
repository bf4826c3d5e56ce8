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

#pragma once

// HTTP/JSON front end.
//
//   POST /sessions                     {"volume_path", "gt_path"?} or multipart
//                                      files "header", "voxels", "gt"?
//   POST /sessions/:id/rounds          {"clicks": [{"slice","row","col","polarity"}]}
//   GET  /sessions/:id/masks           ?round=k&which=fused|raw
//   GET  /sessions/:id/metrics
//   GET  /sessions/:id/log
//   GET  /sessions/:id/slices/:i       ?overlay=1&round=k  (image/png)

#include <httplib.h>

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "volseg/png.hpp"
#include "volseg/session.hpp"

namespace volseg {

class SessionService {
 public:
  SessionService(const Interactor<float>& interactor, const PropagationModel<float>& propagator,
                 const QualityNet<float>& quality, EngineConfig cfg, std::optional<fs::path> state_dir = {})
      : pipe_(make_pipeline(interactor, propagator, &quality, cfg.fusion.batch, true)),
        cfg_(cfg),
        state_dir_(std::move(state_dir)) {
    cfg_.validate();
    if (state_dir_) fs::create_directories(*state_dir_);
  }

  void mount(httplib::Server& srv) {
    srv.Post("/sessions", [this](const httplib::Request& q, httplib::Response& r) { guarded(r, [&] { create(q, r); }); });
    srv.Post("/sessions/:id/rounds",
             [this](const httplib::Request& q, httplib::Response& r) { guarded(r, [&] { round(q, r); }); });
    srv.Get("/sessions/:id/masks", [this](const httplib::Request& q, httplib::Response& r) { guarded(r, [&] { masks(q, r); }); });
    srv.Get("/sessions/:id/metrics",
            [this](const httplib::Request& q, httplib::Response& r) { guarded(r, [&] { metrics(q, r); }); });
    srv.Get("/sessions/:id/log", [this](const httplib::Request& q, httplib::Response& r) { guarded(r, [&] { log(q, r); }); });
    srv.Get("/sessions/:id/slices/:i",
            [this](const httplib::Request& q, httplib::Response& r) { guarded(r, [&] { slice(q, r); }); });
  }

 private:
  struct Entry {
    std::mutex mu;  // serializes rounds within a session
    Session session;
  };

  template <class F>
  static void guarded(httplib::Response& r, F&& f) {
    auto fail = [&](int status, const std::string& msg) {
      r.status = status;
      r.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json");
    };
    try {
      f();
    } catch (const NotFoundError& e) {
      fail(404, e.what());
    } catch (const StateError& e) {
      fail(409, e.what());
    } catch (const IoError& e) {
      fail(400, e.what());
    } catch (const Error& e) {
      fail(400, e.what());
    } catch (const nlohmann::json::exception& e) {
      fail(400, std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
      fail(500, e.what());
    }
  }

  static void reply(httplib::Response& r, const nlohmann::json& j, int status = 200) {
    r.status = status;
    r.set_content(j.dump(), "application/json");
  }

  std::shared_ptr<Entry> find(const httplib::Request& q) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(q.path_params.at("id"));
    if (it == sessions_.end()) throw NotFoundError("unknown session " + q.path_params.at("id"));
    return it->second;
  }

  static const Round& pick_round(const Session& s, const httplib::Request& q) {
    if (s.rounds().empty()) throw StateError("session has no rounds yet");
    int k = static_cast<int>(s.rounds().size());
    if (q.has_param("round")) {
      try {
        k = std::stoi(q.get_param_value("round"));
      } catch (const std::exception&) {
        throw ValidationError("round must be an integer");
      }
    }
    if (k < 1 || k > static_cast<int>(s.rounds().size())) throw NotFoundError("no round " + std::to_string(k));
    return s.rounds()[k - 1];
  }

  void create(const httplib::Request& q, httplib::Response& r) {
    std::optional<Volume> raw;
    std::optional<MaskSequence> gt;
    std::string ref;
    if (q.is_multipart_form_data()) {
      if (!q.has_file("header") || !q.has_file("voxels")) throw ValidationError("upload needs header and voxels parts");
      raw = parse_volume(q.get_file_value("header").content, q.get_file_value("voxels").content, "upload");
      if (q.has_file("gt")) gt = masks_from_json(io_detail::parse_json(q.get_file_value("gt").content, "gt"));
      ref = "upload";
    } else {
      const auto j = io_detail::parse_json(q.body, "request body");
      if (!j.contains("volume_path")) throw ValidationError("body needs volume_path");
      ref = j.at("volume_path").get<std::string>();
      raw = load_volume(ref);
      if (j.contains("gt_path")) gt = import_masks(j.at("gt_path").get<std::string>());
    }
    auto vol = std::make_shared<const Volume>(normalize_intensity(*raw, cfg_.window_lo, cfg_.window_hi));
    std::lock_guard lock(mu_);
    const std::string id = "s" + std::to_string(++counter_);
    std::shared_ptr<Entry> e(new Entry{{}, Session(id, vol, std::move(gt), cfg_, ref)});
    sessions_.emplace(id, e);
    reply(r, {{"id", id}, {"dims", {vol->slices(), vol->rows(), vol->cols()}}, {"evaluation", e->session.gt().has_value()}},
          201);
  }

  void round(const httplib::Request& q, httplib::Response& r) {
    auto e = find(q);
    const auto j = io_detail::parse_json(q.body, "request body");
    if (!j.contains("clicks") || !j["clicks"].is_array()) throw ValidationError("body needs a clicks array");
    std::vector<Click> clicks;
    for (const auto& c : j["clicks"]) clicks.push_back(click_from_json(c));
    std::lock_guard lock(e->mu);
    const Round& rd = run_round(e->session, pipe_, std::move(clicks));
    nlohmann::json out = {{"round", rd.number},
                          {"prompt_index", rd.prompt_index},
                          {"decisions", decisions_string(rd.decisions)},
                          {"scores", rd.scores}};
    if (e->session.gt()) out["mean_dice"] = rd.mean_dice;
    if (state_dir_) io_detail::write_file(*state_dir_ / (e->session.id() + ".json"), session_log(e->session).dump());
    reply(r, out);
  }

  void masks(const httplib::Request& q, httplib::Response& r) {
    auto e = find(q);
    std::lock_guard lock(e->mu);
    const Round& rd = pick_round(e->session, q);
    const std::string which = q.has_param("which") ? q.get_param_value("which") : "fused";
    if (which != "fused" && which != "raw") throw ValidationError("which must be fused or raw");
    auto j = masks_to_json(which == "raw" ? rd.raw : rd.fused);
    j["round"] = rd.number;
    reply(r, j);
  }

  void metrics(const httplib::Request& q, httplib::Response& r) {
    auto e = find(q);
    std::lock_guard lock(e->mu);
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& rd : e->session.rounds()) {
      nlohmann::json x = {{"round", rd.number}, {"prompt_index", rd.prompt_index},
                          {"decisions", decisions_string(rd.decisions)}};
      if (e->session.gt()) {
        x["mean_dice"] = rd.mean_dice;
        x["slice_dice"] = rd.slice_dice;
      }
      rounds.push_back(std::move(x));
    }
    reply(r, {{"id", e->session.id()}, {"evaluation", e->session.gt().has_value()}, {"rounds", rounds}});
  }

  void log(const httplib::Request& q, httplib::Response& r) {
    auto e = find(q);
    std::lock_guard lock(e->mu);
    reply(r, session_log(e->session));
  }

  void slice(const httplib::Request& q, httplib::Response& r) {
    auto e = find(q);
    int i = 0;
    try {
      i = std::stoi(q.path_params.at("i"));
    } catch (const std::exception&) {
      throw ValidationError("slice index must be an integer");
    }
    std::lock_guard lock(e->mu);
    const Volume& v = e->session.volume();
    if (i < 1 || i > v.slices()) throw NotFoundError("slice " + std::to_string(i) + " outside [1, " + std::to_string(v.slices()) + "]");
    const bool overlay = q.has_param("overlay") && q.get_param_value("overlay") != "0";
    const BinaryMask* m = overlay ? &pick_round(e->session, q).fused[i] : nullptr;
    r.set_content(png::render_slice(v.slice(i), v.rows(), v.cols(), m), "image/png");
  }

  Pipeline pipe_;
  EngineConfig cfg_;
  std::optional<fs::path> state_dir_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace volseg
