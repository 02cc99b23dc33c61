#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "egl/alpc.hpp"
#include "egl/core/config.hpp"
#include "egl/core/metrics.hpp"
#include "egl/core/rng.hpp"
#include "egl/core/types.hpp"
#include "egl/datagen.hpp"
#include "egl/numkern/adam.hpp"
#include "egl/numkern/attention.hpp"
#include "egl/numkern/tape.hpp"

namespace egl::ensemble {

using nk::Index;
using nk::Mat;
using nk::Parameter;
using nk::Tape;
using nk::Var;

// Per-snapshot encodings of every entity, chronological order.
struct SnapshotStack {
  std::vector<Mat> z;

  std::size_t snapshots() const { return z.size(); }
  Index entities() const { return z.empty() ? 0 : z.front().rows(); }
  Index dim() const { return z.empty() ? 0 : z.front().cols(); }

  void validate() const {
    if (z.size() < 2) throw Error("snapshot stack needs at least 2 snapshots, got " + std::to_string(z.size()));
    for (const auto& m : z) {
      if (m.rows() != entities() || m.cols() != dim()) throw Error("snapshots cover different lexicons or widths");
      if (!m.allFinite()) throw Error("snapshot encodings are not finite");
    }
  }
};

inline SnapshotStack stack_snapshots(std::vector<alpc::AlpcModel>& models, const alpc::AlpcContext& ctx) {
  if (models.size() < 2) throw Error("stack_snapshots needs at least 2 models, got " + std::to_string(models.size()));
  SnapshotStack st;
  for (auto& m : models) {
    if (m.in_dim != static_cast<std::size_t>(ctx.x.cols()))
      throw Error("snapshot model expects " + std::to_string(m.in_dim) + " input features, context has " +
                  std::to_string(ctx.x.cols()));
    if (static_cast<Index>(ctx.graph.n) != ctx.x.rows()) throw Error("context graph and features disagree");
    st.z.push_back(alpc::embed(m, ctx));
  }
  st.validate();
  return st;
}

// Training sets resampled with replacement (positives and negatives
// separately); the observed graph is shared.
inline datagen::DataSplit bootstrap_split(const datagen::DataSplit& s, Rng& rng) {
  datagen::DataSplit out = s;
  auto draw = [&](const std::vector<PairExample>& src, std::vector<PairExample>& dst) {
    dst.clear();
    for (std::size_t i = 0; i < src.size(); ++i) dst.push_back(src[rng.below(src.size())]);
  };
  draw(s.train_pos, out.train_pos);
  draw(s.train_neg, out.train_neg);
  return out;
}

// S ranking-model snapshots, each trained on its own bootstrap sample.
inline std::vector<alpc::AlpcModel> train_snapshots(const datagen::DataSplit& split, const EntityGraph& candidates,
                                                    const EmbeddingTable& se, const EmbeddingTable& co,
                                                    const alpc::AlpcHyper& hyper, std::size_t n_snapshots,
                                                    std::uint64_t seed,
                                                    std::vector<alpc::TrainReport>* reports = nullptr) {
  if (n_snapshots < 2) throw Error("need at least 2 snapshots");
  Rng root(seed);
  std::vector<alpc::AlpcModel> out;
  for (std::size_t i = 0; i < n_snapshots; ++i) {
    Rng boot = root.fork();
    const std::uint64_t train_seed = root.next_u64();
    alpc::TrainReport rep;
    out.push_back(alpc::train_alpc(bootstrap_split(split, boot), candidates, se, co, hyper, train_seed, &rep));
    if (reports) reports->push_back(std::move(rep));
  }
  return out;
}

struct EnsembleHyper {
  std::size_t heads = 2;
  std::size_t hidden = 32;
  std::size_t batch = 512;
  double lr = 0.005;
  std::size_t epochs = 20;
  std::size_t patience = 5;

  void validate() const {
    if (heads < 1 || hidden < 1 || batch < 1) throw Error("heads, hidden and batch must be >= 1");
    if (!(lr > 0.0)) throw Error("ens_lr must be > 0");
  }

  static EnsembleHyper from_config(const RunConfig& c) {
    EnsembleHyper h;
    h.heads = c.size("ens_heads");
    h.lr = c.num("ens_lr");
    h.epochs = c.size("ens_epochs");
    h.hidden = c.size("hidden");
    h.batch = c.size("batch");
    h.patience = c.size("patience");
    h.validate();
    return h;
  }
};

class EnsembleModel {
 public:
  EnsembleHyper hyper;
  std::size_t snapshots = 0;
  std::size_t dim = 0;
  std::vector<Parameter> params;

  EnsembleModel() = default;

  // Output layer starts at zero so the initial prediction is 0.5.
  EnsembleModel(std::size_t s, std::size_t d, const EnsembleHyper& h, std::uint64_t seed)
      : hyper(h), snapshots(s), dim(d) {
    h.validate();
    if (s < 2) throw Error("ensemble needs at least 2 snapshots");
    if (d % h.heads != 0)
      throw Error("snapshot dim " + std::to_string(d) + " not divisible by " + std::to_string(h.heads) + " heads");
    Rng rng(seed);
    const auto D = static_cast<Index>(d), H = static_cast<Index>(h.hidden);
    auto add = [&](const std::string& name, Mat v) { params.emplace_back(name, std::move(v)); };
    add("tag", nk::glorot(2, D, rng));
    add("mha.wq", nk::glorot(D, D, rng));
    add("mha.wk", nk::glorot(D, D, rng));
    add("mha.wv", nk::glorot(D, D, rng));
    add("mha.wo", nk::glorot(D, D, rng));
    add("mha.bo", Mat::Zero(1, D));
    add("head.w1", nk::glorot(D, H, rng));
    add("head.b1", Mat::Zero(1, H));
    add("head.w2", Mat::Zero(H, 1));
    add("head.b2", Mat::Zero(1, 1));
    reindex();
  }

  void reindex() {
    by_name_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) by_name_[params[i].name] = i;
  }

  std::size_t index(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("ensemble has no parameter '" + name + "'");
    return it->second;
  }

  Parameter& param(const std::string& name) { return params[index(name)]; }

  std::vector<Parameter*> param_ptrs() {
    std::vector<Parameter*> out;
    for (auto& p : params) out.push_back(&p);
    return out;
  }

  bool operator==(const EnsembleModel& o) const {
    if (snapshots != o.snapshots || dim != o.dim || params.size() != o.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name != o.params[i].name || params[i].value != o.params[i].value) return false;
    return true;
  }

 private:
  std::map<std::string, std::size_t> by_name_;
};

inline std::vector<Var> bind(Tape& t, EnsembleModel& m, bool track) {
  std::vector<Var> out;
  for (auto& p : m.params) out.push_back(track ? t.param(p) : t.constant(p.value));
  return out;
}

// Token rows for each pair: S snapshot vectors of u then S of v.
inline Mat pair_tokens(const SnapshotStack& st, const std::vector<PairExample>& pairs) {
  const auto S = static_cast<Index>(st.snapshots());
  Mat out(static_cast<Index>(pairs.size()) * 2 * S, st.dim());
  Index r = 0;
  for (const auto& p : pairs) {
    for (Index s = 0; s < S; ++s) out.row(r++) = st.z[static_cast<std::size_t>(s)].row(p.src);
    for (Index s = 0; s < S; ++s) out.row(r++) = st.z[static_cast<std::size_t>(s)].row(p.dst);
  }
  return out;
}

// Logits (B x 1) for B pairs whose tokens are stacked in blocks of 2S rows.
inline Var forward(const EnsembleModel& m, const std::vector<Var>& pv, Var tokens) {
  auto P = [&](const char* name) { return pv[m.index(name)]; };
  const auto S = static_cast<Index>(m.snapshots), D = static_cast<Index>(m.dim);
  if (tokens.cols() != D || tokens.rows() % (2 * S) != 0) throw Error("token matrix does not match ensemble shape");
  const Index B = tokens.rows() / (2 * S);
  std::vector<int> tag_idx;
  for (Index b = 0; b < B; ++b)
    for (Index k = 0; k < 2 * S; ++k) tag_idx.push_back(k < S ? 0 : 1);
  Var x = nk::add(tokens, nk::gather_rows(P("tag"), tag_idx));
  Var q = nk::matmul(x, P("mha.wq")), k = nk::matmul(x, P("mha.wk")), v = nk::matmul(x, P("mha.wv"));
  const auto heads = static_cast<Index>(m.hyper.heads);
  const Index dh = D / heads;
  std::vector<Var> outs;
  for (Index h = 0; h < heads; ++h)
    outs.push_back(nk::block_attention(nk::slice_cols(q, h * dh, dh), nk::slice_cols(k, h * dh, dh),
                                       nk::slice_cols(v, h * dh, dh), 2 * S));
  Var att = nk::affine(heads == 1 ? outs[0] : nk::concat_cols(outs), P("mha.wo"), P("mha.bo"));
  Var pooled = nk::block_mean_rows(att, 2 * S);
  Var hid = nk::relu(nk::affine(pooled, P("head.w1"), P("head.b1")));
  return nk::affine(hid, P("head.w2"), P("head.b2"));
}

inline std::vector<double> predict(EnsembleModel& m, const SnapshotStack& st, const std::vector<PairExample>& pairs) {
  std::vector<double> out;
  if (pairs.empty()) return out;
  if (static_cast<std::size_t>(st.snapshots()) != m.snapshots || static_cast<std::size_t>(st.dim()) != m.dim)
    throw Error("snapshot stack does not match ensemble shape");
  Tape t;
  auto pv = bind(t, m, false);
  const Mat s = forward(m, pv, t.constant(pair_tokens(st, pairs))).value();
  for (Index i = 0; i < s.rows(); ++i) out.push_back(nk::stable_sigmoid(s(i, 0)));
  return out;
}

struct EnsembleReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
};

// BCE on the stacked snapshots (frozen); 10% of training pairs drive early
// stopping and the best-validation head is returned.
inline EnsembleModel train_ensemble(const SnapshotStack& st, const datagen::DataSplit& split,
                                    const EnsembleHyper& hyper, std::uint64_t seed, EnsembleReport* report = nullptr) {
  st.validate();
  hyper.validate();
  EnsembleReport local;
  EnsembleReport& rep = report ? *report : local;
  Rng root(seed);
  EnsembleModel model(st.snapshots(), static_cast<std::size_t>(st.dim()), hyper, root.next_u64());
  Rng rng = root.fork();
  auto pairs = split.train();
  if (pairs.empty()) throw Error("train_ensemble: no training pairs");
  rng.shuffle(pairs);
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(pairs.size())));
  std::vector<PairExample> val(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<PairExample> train(pairs.begin() + static_cast<std::ptrdiff_t>(n_val), pairs.end());
  if (train.empty()) throw Error("train_ensemble: validation split left no training pairs");
  const Mat val_tokens = pair_tokens(st, val);
  const auto val_y = alpc::labels_of(val);

  auto params = model.param_ptrs();
  nk::AdamState adam;
  nk::AdamConfig acfg;
  acfg.lr = hyper.lr;
  auto val_loss = [&]() {
    if (val.empty()) return 0.0;
    Tape t;
    auto pv = bind(t, model, false);
    return nk::bce_with_logits(forward(model, pv, t.constant(val_tokens)), val_y).scalar();
  };

  EnsembleModel best = model;
  double best_val = val_loss();
  std::size_t since_best = 0;
  for (std::size_t ep = 0; ep < hyper.epochs; ++ep) {
    rng.shuffle(train);
    double ep_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < train.size(); start += hyper.batch) {
      const std::size_t end = std::min(train.size(), start + hyper.batch);
      std::vector<PairExample> b(train.begin() + static_cast<std::ptrdiff_t>(start),
                                 train.begin() + static_cast<std::ptrdiff_t>(end));
      Tape t;
      auto pv = bind(t, model, true);
      Var loss = nk::bce_with_logits(forward(model, pv, t.constant(pair_tokens(st, b))), alpc::labels_of(b));
      const double lv = loss.scalar();
      if (!std::isfinite(lv))
        throw Error("train_ensemble diverged at epoch " + std::to_string(ep) + " batch " + std::to_string(n_batches));
      nk::zero_grads(params);
      t.backward(loss);
      nk::adam_update(params, adam, acfg);
      ep_loss += lv;
      ++n_batches;
    }
    rep.train_loss.push_back(ep_loss / static_cast<double>(n_batches));
    const double v = val_loss();
    if (!std::isfinite(v)) throw Error("train_ensemble diverged: validation loss non-finite");
    rep.val_loss.push_back(v);
    if (v < best_val) {
      best_val = v;
      best = model;
      rep.best_epoch = ep + 1;
      since_best = 0;
    } else if (++since_best >= hyper.patience) {
      break;
    }
  }
  best.reindex();
  return best;
}

// h_e: concatenated snapshot vectors, unit L2 norm.
inline EmbeddingTable export_embeddings(const SnapshotStack& st) {
  st.validate();
  const auto S = st.snapshots();
  const auto d = static_cast<std::size_t>(st.dim());
  EmbeddingTable out(static_cast<std::size_t>(st.entities()), S * d);
  for (std::size_t e = 0; e < out.rows(); ++e) {
    double* row = out.row(e);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t k = 0; k < d; ++k) row[s * d + k] = st.z[s](static_cast<Index>(e), static_cast<Index>(k));
    double norm = 0.0;
    for (std::size_t k = 0; k < out.dim(); ++k) norm += row[k] * row[k];
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw Error("entity " + std::to_string(e) + " has a zero fused embedding");
    for (std::size_t k = 0; k < out.dim(); ++k) row[k] /= norm;
  }
  return out;
}

struct EnsembleEval {
  double auc = 0.0;
  double acc = 0.0;
};

inline EnsembleEval evaluate(EnsembleModel& m, const SnapshotStack& st, const std::vector<PairExample>& test_pos,
                             const std::vector<PairExample>& test_neg) {
  if (test_pos.empty() || test_neg.empty()) throw Error("evaluate needs non-empty test sets");
  const auto p = predict(m, st, test_pos), n = predict(m, st, test_neg);
  std::vector<int> pred, labels;
  for (double y : p) {
    pred.push_back(y >= 0.5);
    labels.push_back(1);
  }
  for (double y : n) {
    pred.push_back(y >= 0.5);
    labels.push_back(0);
  }
  return {egl::auc(p, n), accuracy(pred, labels)};
}

// Adaptive-threshold accuracy of one snapshot model on given encodings.
inline double snapshot_accuracy(alpc::AlpcModel& m, const Mat& z, const std::vector<PairExample>& test_pos,
                                const std::vector<PairExample>& test_neg) {
  auto all = test_pos;
  all.insert(all.end(), test_neg.begin(), test_neg.end());
  const auto sc = alpc::score_pairs(m, z, all);
  std::vector<int> pred, labels;
  for (std::size_t i = 0; i < all.size(); ++i) {
    pred.push_back(sc.s[i] >= sc.eps[i]);
    labels.push_back(all[i].label);
  }
  return accuracy(pred, labels);
}

struct StabilityReport {
  std::vector<double> ensemble_acc;
  std::vector<std::vector<double>> single_acc;  // [snapshot][draw]
  double ensemble_variance = 0.0;
  double mean_single_variance = 0.0;
};

// Adds i.i.d. N(0, sigma^2) noise to every snapshot encoding, `draws` times,
// and records test ACC of the ensemble and of each snapshot on its own.
inline StabilityReport perturbation_stability(EnsembleModel& ens, std::vector<alpc::AlpcModel>& models,
                                              const SnapshotStack& st, const std::vector<PairExample>& test_pos,
                                              const std::vector<PairExample>& test_neg, double sigma,
                                              std::size_t draws, std::uint64_t seed) {
  if (models.size() != st.snapshots()) throw Error("one model per snapshot required");
  Rng rng(seed);
  StabilityReport rep;
  rep.single_acc.resize(models.size());
  for (std::size_t d = 0; d < draws; ++d) {
    SnapshotStack noisy = st;
    for (auto& z : noisy.z)
      for (Index i = 0; i < z.size(); ++i) z.data()[i] += sigma * rng.normal();
    rep.ensemble_acc.push_back(evaluate(ens, noisy, test_pos, test_neg).acc);
    for (std::size_t s = 0; s < models.size(); ++s)
      rep.single_acc[s].push_back(snapshot_accuracy(models[s], noisy.z[s], test_pos, test_neg));
  }
  rep.ensemble_variance = variance_of(rep.ensemble_acc);
  std::vector<double> vars;
  for (const auto& a : rep.single_acc) vars.push_back(variance_of(a));
  rep.mean_single_variance = mean_of(vars);
  return rep;
}

// ---- ensemble file ----
// Layout (little-endian): "EGLENSM\0", u32 version = 1, u64 snapshots, u64 dim,
// u64 heads hidden batch epochs patience, f64 lr, then the parameter block
// written by alpc::write_params.

inline constexpr char kEnsembleMagic[8] = {'E', 'G', 'L', 'E', 'N', 'S', 'M', '\0'};
inline constexpr std::uint32_t kEnsembleVersion = 1;

inline void save_ensemble(const EnsembleModel& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream o(path, std::ios::binary);
  if (!o) throw Error("cannot write " + path.string());
  o.write(kEnsembleMagic, 8);
  alpc::detail::put(o, kEnsembleVersion);
  for (std::size_t v : {m.snapshots, m.dim, m.hyper.heads, m.hyper.hidden, m.hyper.batch, m.hyper.epochs,
                        m.hyper.patience})
    alpc::detail::put<std::uint64_t>(o, v);
  alpc::detail::put(o, m.hyper.lr);
  alpc::write_params(o, m.params);
}

inline EnsembleModel load_ensemble(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kEnsembleMagic, 8) != 0) throw Error(path.string() + " is not an ensemble file");
  const auto version = alpc::detail::get<std::uint32_t>(in);
  if (version != kEnsembleVersion) throw Error("unsupported ensemble version " + std::to_string(version));
  EnsembleModel m;
  for (std::size_t* f : {&m.snapshots, &m.dim, &m.hyper.heads, &m.hyper.hidden, &m.hyper.batch, &m.hyper.epochs,
                         &m.hyper.patience})
    *f = alpc::detail::get<std::uint64_t>(in);
  m.hyper.lr = alpc::detail::get<double>(in);
  m.params = alpc::read_params(in);
  m.reindex();
  EnsembleModel shape(m.snapshots, m.dim, m.hyper, 0);
  if (shape.params.size() != m.params.size()) throw Error("ensemble file parameter list does not match its header");
  for (std::size_t i = 0; i < m.params.size(); ++i)
    if (shape.params[i].name != m.params[i].name || shape.params[i].value.rows() != m.params[i].value.rows() ||
        shape.params[i].value.cols() != m.params[i].value.cols())
      throw Error("ensemble parameter '" + m.params[i].name + "' has unexpected name or shape");
  return m;
}

}  // namespace egl::ensemble
