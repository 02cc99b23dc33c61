#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "egl/alpc.hpp"
#include "egl/candgen.hpp"
#include "egl/core/config.hpp"
#include "egl/core/io.hpp"
#include "egl/datagen.hpp"
#include "egl/ensemble.hpp"
#include "egl/extract.hpp"
#include "egl/graphstore.hpp"
#include "egl/preference.hpp"

namespace egl::service {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- feedback ledger: `src \t dst`, src < dst, one line per pair ----

inline std::vector<std::pair<EntityId, EntityId>> read_feedback(const fs::path& path) {
  std::vector<std::pair<EntityId, EntityId>> out;
  if (!fs::exists(path)) return out;
  auto in = detail::open_in(path);
  EntityId a, b;
  while (in >> a >> b) out.emplace_back(a, b);
  return out;
}

// Stage outputs carry a key file; a stage whose key matches is loaded
// instead of recomputed.
class StageCache {
 public:
  explicit StageCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_ / "stages"); }

  bool fresh(const std::string& stage, const std::string& key, const std::vector<fs::path>& outputs) const {
    std::ifstream in(dir_ / "stages" / (stage + ".key"));
    std::string have;
    if (!in || !std::getline(in, have) || have != key) return false;
    for (const auto& p : outputs)
      if (!fs::exists(p)) return false;
    return true;
  }

  void mark(const std::string& stage, const std::string& key) const {
    std::ofstream(dir_ / "stages" / (stage + ".key")) << key << '\n';
  }

 private:
  fs::path dir_;
};

struct PipelineOptions {
  std::ostream* log = nullptr;
  bool resume = true;
  // Stage name after which to return early; empty runs through evaluate.
  std::string stop_after;
};

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"world",  "extract", "candgen",     "split",       "train-alpc",
                                                 "ensemble", "filter", "build-store", "build-index", "evaluate"};
  return names;
}

// extract -> candgen -> split -> train-alpc (x snapshots) -> ensemble ->
// filter -> build-store -> build-index -> evaluate, all under `out`.
// Returns the manifest, also written to out/manifest.json.
inline json run_pipeline(const RunConfig& cfg, const fs::path& out, const PipelineOptions& opt = {}) {
  fs::create_directories(out);
  StageCache cache(out);
  const std::string cfg_text = cfg.dump();
  std::string chain, current = "setup";
  auto say = [&](const std::string& s) {
    if (opt.log) *opt.log << s << std::endl;
  };
  // Runs `compute` unless cached. A stage key covers the config keys it
  // reads, any extra input digest, and the key of the stage before it.
  auto stage = [&](const std::string& name, const std::vector<fs::path>& outputs,
                   std::initializer_list<const char*> keys, const std::string& extra,
                   const std::function<void()>& compute) {
    current = name;
    std::string material = name + "|" + extra;
    for (const char* k : keys) material += std::string("|") + k + "=" + cfg.str(k);
    chain = hex64(fnv1a(material, fnv1a(chain)));
    if (opt.resume && cache.fresh(name, chain, outputs)) {
      say("[" + name + "] cached");
      return;
    }
    say("[" + name + "] running");
    compute();
    cache.mark(name, chain);
  };
  auto stop_here = [&](const std::string& name) { return opt.stop_after == name; };
  const json partial = {{"stopped_after", opt.stop_after}};
  if (!opt.stop_after.empty() &&
      std::find(stage_names().begin(), stage_names().end(), opt.stop_after) == stage_names().end())
    throw Error("unknown pipeline stage '" + opt.stop_after + "'");
  try {
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  Rng root(seed);
  const std::uint64_t s_world = root.next_u64(), s_logs = root.next_u64(), s_sgns = root.next_u64(),
                      s_split = root.next_u64(), s_alpc = root.next_u64(), s_ens = root.next_u64(),
                      s_noise = root.next_u64();

  // world
  const fs::path wdir = out / "world";
  stage("world",
        {wdir / "lexicon.tsv", wdir / "truth_edges.tsv", wdir / "semantic.txt", wdir / "communities.tsv",
         wdir / "logs.jsonl"},
        {"seed", "n_entities", "n_communities", "intra_p", "inter_p", "n_users", "walk_len", "walks_per_user",
         "semantic_noise", "semantic_dim", "now"},
        "", [&] {
          auto wp = datagen::WorldParams::from_config(cfg);
          wp.seed = s_world;
          auto w = datagen::gen_world(wp);
          datagen::write_world(w, wdir);
          extract::write_logs(datagen::render_logs(w, s_logs), wdir / "logs.jsonl");
        });
  if (stop_here("world")) return partial;
  const auto lex = load_lexicon(wdir / "lexicon.tsv");
  const auto truth = read_edges(wdir / "truth_edges.tsv", lex);
  const auto communities = datagen::read_communities(wdir / "communities.tsv", lex.size());

  // extract
  stage("extract", {out / "sequences.jsonl"}, {"window_days", "now"}, "", [&] {
    auto seqs = extract::build_sequences(extract::read_logs(wdir / "logs.jsonl"), lex,
                                         static_cast<int>(cfg.integer("window_days")), cfg.integer("now"));
    write_sequences(seqs, out / "sequences.jsonl");
  });
  if (stop_here("extract")) return partial;
  const auto seqs = read_sequences(out / "sequences.jsonl", lex);

  // candgen
  candgen::SemanticProvider sp = candgen::SemanticProvider::from_config(cfg);
  if (sp.mode == candgen::SemanticMode::file && sp.file.empty()) sp.file = wdir / "semantic.txt";
  current = "candgen";
  const std::string sem_hash = sp.mode == candgen::SemanticMode::file ? file_hash(sp.file) : "";
  stage("candgen", {out / "eco.txt", out / "ese.txt", out / "candidates.tsv"},
        {"seed", "dim", "window", "kneg", "sgns_epochs", "sgns_lr", "unigram_power", "semantic_mode", "semantic_file",
         "semantic_buckets", "semantic_ngram", "topk", "min_sim", "candidate_mode"},
        sem_hash, [&] {
    auto eco = candgen::train_sgns(seqs, lex, candgen::SgnsConfig::from_config(cfg), s_sgns);
    auto ese = candgen::semantic_embed(lex, sp);
    write_embeddings(eco, out / "eco.txt");
    write_embeddings(ese, out / "ese.txt");
    write_edges(candgen::generate_candidates(eco, ese, cfg.size("topk"), cfg.num("min_sim"),
                                             candgen::parse_candidate_mode(cfg.str("candidate_mode"))),
                out / "candidates.tsv");
  });
  if (stop_here("candgen")) return partial;
  const auto eco = read_embeddings(out / "eco.txt", lex.size());
  const auto ese = read_embeddings(out / "ese.txt", lex.size());
  const auto cand = read_edges(out / "candidates.tsv", lex);

  // split
  stage("split", {out / "split" / "observed_edges.tsv"}, {"seed", "test_frac", "train_neg_ratio"}, "", [&] {
    datagen::write_split(datagen::split_edges(truth, cfg.num("test_frac"), cfg.num("train_neg_ratio"), s_split),
                         out / "split");
  });
  if (stop_here("split")) return partial;
  const auto split = datagen::read_split(out / "split", lex);

  // ranking snapshots
  const auto hyper = alpc::AlpcHyper::from_config(cfg);
  const std::size_t n_snap = cfg.size("snapshots");
  std::vector<fs::path> model_paths;
  for (std::size_t i = 0; i < n_snap; ++i) model_paths.push_back(out / "models" / ("alpc_" + std::to_string(i) + ".bin"));
  stage("train-alpc", model_paths,
        {"seed", "alpha", "beta", "tau", "anchor_sim", "layers", "hidden", "batch", "anchor_batch", "lr", "epochs",
         "patience", "hard_neg_ratio", "neighbor_cap", "encoder", "snapshots"},
        "", [&] {
    std::vector<alpc::TrainReport> reps;
    auto models = ensemble::train_snapshots(split, cand, ese, eco, hyper, n_snap, s_alpc, &reps);
    json curves = json::array();
    for (std::size_t i = 0; i < models.size(); ++i) {
      alpc::save_model(models[i], model_paths[i]);
      curves.push_back({{"train_loss", reps[i].train_loss},
                        {"val_loss", reps[i].val_loss},
                        {"best_epoch", reps[i].best_epoch},
                        {"anchors", reps[i].anchors},
                        {"hard_negatives", reps[i].hard_negatives},
                        {"warnings", reps[i].warnings}});
    }
    std::ofstream(out / "models" / "training.json") << curves.dump(2) << '\n';
  });
  if (stop_here("train-alpc")) return partial;
  std::vector<alpc::AlpcModel> models;
  for (const auto& p : model_paths) models.push_back(alpc::load_model(p));
  const auto ctx = alpc::make_context(hyper, split.observed_graph, ese, eco);

  // ensemble
  const auto stack = ensemble::stack_snapshots(models, ctx);
  stage("ensemble", {out / "ensemble.bin", out / "he.txt"},
        {"seed", "ens_heads", "ens_epochs", "ens_lr", "hidden", "batch", "patience"}, "", [&] {
    auto ens = ensemble::train_ensemble(stack, split, ensemble::EnsembleHyper::from_config(cfg), s_ens);
    ensemble::save_ensemble(ens, out / "ensemble.bin");
    write_embeddings(ensemble::export_embeddings(stack), out / "he.txt");
  });
  if (stop_here("ensemble")) return partial;
  auto ens = ensemble::load_ensemble(out / "ensemble.bin");
  const auto he = read_embeddings(out / "he.txt", lex.size());

  // filter with the latest snapshot
  stage("filter", {out / "filtered.tsv"}, {}, "", [&] {
    write_edges(alpc::filter_edges(models.back(), ctx, cand), out / "filtered.tsv");
  });
  if (stop_here("filter")) return partial;
  const auto filtered = read_edges(out / "filtered.tsv", lex);

  // store
  current = "build-store";
  const auto feedback = read_feedback(out / "feedback.tsv");
  const std::string fb_hash = fs::exists(out / "feedback.tsv") ? file_hash(out / "feedback.tsv") : "";
  stage("build-store", {out / "store" / "edges.tsv", out / "store" / "manifest"}, {"now"}, fb_hash, [&] {
    auto st = graphstore::build_store(filtered, feedback, cfg.integer("now"));
    graphstore::save_store(st, out / "store", {{"filtered", file_hash(out / "filtered.tsv")}, {"feedback", fb_hash}});
  });
  if (stop_here("build-store")) return partial;
  const auto store = graphstore::load_store(out / "store");

  // index
  stage("build-index", {out / "index.bin"}, {}, "", [&] {
    preference::save_index(preference::build_index(seqs, he), out / "index.bin");
  });
  if (stop_here("build-index")) return partial;

  // evaluate
  current = "evaluate";
  say("[evaluate] running");
  auto& latest = models.back();
  const auto ev = alpc::evaluate(latest, ctx, split.test_pos, split.test_neg);
  const auto ens_ev = ensemble::evaluate(ens, stack, split.test_pos, split.test_neg);
  const auto stab = ensemble::perturbation_stability(ens, models, stack, split.test_pos, split.test_neg, 0.05, 5, s_noise);
  const auto cand_ov = candgen::edge_overlap(cand, truth);
  const auto filt_ov = candgen::edge_overlap(filtered, truth);
  const double cors = store.graph.n_edges() ? graphstore::compute_cors(graphstore::judge_edges(store.graph, truth, communities)) : 0.0;
  const double aeec = graphstore::compute_aeec(store.graph, lex.size());
  std::vector<double> snap_acc;
  for (auto& m : models) snap_acc.push_back(alpc::evaluate(m, ctx, split.test_pos, split.test_neg).acc);

  json manifest;
  manifest["built_at"] = cfg.integer("now");
  manifest["config_hash"] = hex64(fnv1a(cfg_text));
  manifest["metrics"] = {{"auc", ev.auc},
                         {"acc", ev.acc},
                         {"acc_fixed", ev.acc_fixed},
                         {"snapshot_acc", snap_acc},
                         {"ensemble_auc", ens_ev.auc},
                         {"ensemble_acc", ens_ev.acc},
                         {"acc_variance", stab.ensemble_variance},
                         {"single_acc_variance", stab.mean_single_variance},
                         {"candidate_precision", cand_ov.precision()},
                         {"candidate_recall", cand_ov.recall()},
                         {"filtered_precision", filt_ov.precision()},
                         {"filtered_recall", filt_ov.recall()},
                         {"cors", cors},
                         {"aeec", aeec}};
  manifest["counts"] = {{"entities", lex.size()},
                        {"users", seqs.size()},
                        {"candidate_edges", cand.n_edges()},
                        {"filtered_edges", filtered.n_edges()},
                        {"store_edges", store.graph.n_edges()},
                        {"feedback_edges", feedback.size()}};
  std::uint64_t mh = fnv1a("");
  for (const auto& p : model_paths) mh = fnv1a(file_hash(p), mh);
  manifest["artifacts"] = {{"sequences", file_hash(out / "sequences.jsonl")},
                           {"candidates", file_hash(out / "candidates.tsv")},
                           {"alpc_models", hex64(mh)},
                           {"ensemble", file_hash(out / "ensemble.bin")},
                           {"store", file_hash(out / "store" / "edges.tsv")},
                           {"index", file_hash(out / "index.bin")}};
  std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
  std::ofstream(out / "config.cfg") << cfg_text;
  say("[evaluate] done");
  return manifest;
  } catch (const std::exception& e) {
    throw Error("pipeline stage '" + current + "' failed: " + e.what());
  }
}

}  // namespace egl::service
