#pragma once

// Handler-routed generative models.
//
// A model is a host-language procedure that announces each random variable
// it needs through Executor::sample.  Every announcement travels through a
// stack of handlers (outermost first) before a base interpreter fulfils it:
// the forward interpreter draws from the distribution, the replay
// interpreter reads values from a flat vector and accumulates the log
// density.  Handlers may pass a request through unchanged or rewrite it
// into requests for different sites; rewritten requests re-enter the
// remaining inner stack.  Everything is expressed over Var, so the same
// model code serves plain evaluation and reverse-mode differentiation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reparam/autodiff.hpp"
#include "reparam/errors.hpp"
#include "reparam/rng.hpp"

namespace reparam {

using Vals = std::vector<Var>;

enum class DistKind { kNormal, kBernoulliLogit };

// Elementwise-independent distribution of one sample site.  `loc`/`scale`
// broadcast: each holds either one element or `len` elements.  Bernoulli
// sites store their logits in `loc`.
struct Dist {
  DistKind kind = DistKind::kNormal;
  int len = 1;
  Vals loc;
  Vals scale;

  static Dist normal(Var loc, Var scale) { return {DistKind::kNormal, 1, {loc}, {scale}}; }

  static Dist normal_vec(int n, Vals loc, Vals scale) {
    Dist d{DistKind::kNormal, n, std::move(loc), std::move(scale)};
    d.check_shapes();
    return d;
  }

  static Dist bernoulli_logit_vec(Vals logits) {
    const int n = static_cast<int>(logits.size());
    return {DistKind::kBernoulliLogit, n, std::move(logits), {}};
  }

  void check_shapes() const {
    const size_t n = static_cast<size_t>(len);
    if (loc.size() != 1 && loc.size() != n)
      throw DimensionMismatch("distribution loc length must be 1 or event length");
    if (kind == DistKind::kNormal && scale.size() != 1 && scale.size() != n)
      throw DimensionMismatch("distribution scale length must be 1 or event length");
  }

  const Var& loc_at(size_t i) const { return loc[loc.size() == 1 ? 0 : i]; }
  const Var& scale_at(size_t i) const { return scale[scale.size() == 1 ? 0 : i]; }

  // True when every parameter is a plain constant with the given values —
  // used to recognise standard-normal sites that need no recentring.
  bool is_const_normal(double want_loc, double want_scale) const {
    if (kind != DistKind::kNormal) return false;
    for (const Var& m : loc)
      if (m.tracked() || m.v != want_loc) return false;
    for (const Var& s : scale)
      if (s.tracked() || s.v != want_scale) return false;
    return true;
  }
};

struct SiteRequest {
  std::string name;
  Dist dist;
  std::optional<std::vector<double>> observed;

  bool is_observed() const { return observed.has_value(); }
};

class Executor;

using NextFn = std::function<Vals(SiteRequest)>;
// A handler either forwards the request (possibly rewritten) via `next`
// or fabricates the site's value itself.  `next` may be called more than
// once to emit several replacement sites.
using Handler = std::function<Vals(SiteRequest, const NextFn&, Executor&)>;

struct TraceEntry {
  std::string name;
  std::vector<double> value;
  double log_prob = 0.0;
  bool observed = false;
};

struct Trace {
  std::vector<TraceEntry> entries;

  double total_log_prob() const {
    double t = 0.0;
    for (const TraceEntry& e : entries) t += e.log_prob;
    return t;
  }

  const TraceEntry* find(std::string_view name) const {
    for (const TraceEntry& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

struct ModelProgram {
  std::function<void(Executor&)> body;
  std::map<std::string, std::vector<double>> data;  // observed values, by site name
  std::vector<Handler> handlers;                    // outermost first
};

// Flat memory layout of the latent sites of one model, in emission order.
struct LayoutSlot {
  std::string name;
  size_t offset = 0;
  size_t len = 0;
};

struct Layout {
  std::vector<LayoutSlot> slots;
  size_t dim = 0;

  std::vector<std::string> element_names() const {
    std::vector<std::string> out;
    out.reserve(dim);
    for (const LayoutSlot& s : slots) {
      if (s.len == 1) {
        out.push_back(s.name);
      } else {
        for (size_t i = 0; i < s.len; ++i)
          out.push_back(s.name + "[" + std::to_string(i) + "]");
      }
    }
    return out;
  }
};

// Drives one execution of a model body.  The model body talks to the
// executor; the executor routes each request through the handler stack and
// finally realises it in one of two modes:
//   Forward — draw latent values from the site-keyed RNG, record a trace;
//   Replay  — read latent values from a flat vector in layout order and
//             accumulate the joint log density.
class Executor {
 public:
  enum class Mode { kForward, kReplay };

  // Forward execution.
  Executor(const ModelProgram& m, uint64_t seed)
      : model_(m), mode_(Mode::kForward), seed_(seed) {}

  // Replay execution over `x` (latent values in `layout` order).
  Executor(const ModelProgram& m, const Layout& layout, std::span<const Var> x)
      : model_(m), mode_(Mode::kReplay), layout_(&layout), input_(x) {}

  // --- API used by model bodies -------------------------------------

  Var sample(const std::string& name, Var loc, Var scale) {
    Vals v = request(name, Dist::normal(loc, scale));
    return v[0];
  }

  Vals sample_vec(const std::string& name, int n, Vals loc, Vals scale) {
    return request(name, Dist::normal_vec(n, std::move(loc), std::move(scale)));
  }

  Vals sample_bernoulli_logit(const std::string& name, Vals logits) {
    return request(name, Dist::bernoulli_logit_vec(std::move(logits)));
  }

  // --- API used by handlers -----------------------------------------

  // Reparameterising handlers report the original-space value a rewritten
  // site stands for, so bijections between the spaces can be evaluated.
  void record_derived(const std::string& name, const Vals& value) {
    derived_[name] = value;
  }

  // --- Results --------------------------------------------------------

  const Trace& trace() const { return trace_; }
  Var log_prob() const { return log_prob_; }
  const std::map<std::string, Vals>& derived() const { return derived_; }
  const std::map<std::string, Vals>& realized_latents() const { return realized_latents_; }
  // Per-site distribution parameters seen during execution (replay only).
  const std::map<std::string, Dist>& site_dists() const { return site_dists_; }

  // Latent sites in realisation order, as (name, length).
  const std::vector<std::pair<std::string, int>>& latent_sites() const { return latent_sites_; }

  void run() {
    dispatch_depth_ = 0;
    model_.body(*this);
    if (mode_ == Mode::kReplay && cursor_ != layout_->dim)
      throw DimensionMismatch("model consumed " + std::to_string(cursor_) +
                              " of " + std::to_string(layout_->dim) + " latent values");
  }

 private:
  Vals request(std::string name, Dist dist) {
    dist.check_shapes();
    SiteRequest req{std::move(name), std::move(dist), std::nullopt};
    auto it = model_.data.find(req.name);
    if (it != model_.data.end()) {
      if (it->second.size() != static_cast<size_t>(req.dist.len))
        throw DimensionMismatch("observed value for site '" + req.name +
                                "' has length " + std::to_string(it->second.size()) +
                                ", expected " + std::to_string(req.dist.len));
      req.observed = it->second;
    }
    return dispatch(std::move(req), 0);
  }

  Vals dispatch(SiteRequest req, size_t depth) {
    if (depth < model_.handlers.size()) {
      NextFn next = [this, depth](SiteRequest r) { return dispatch(std::move(r), depth + 1); };
      return model_.handlers[depth](std::move(req), next, *this);
    }
    return realize(std::move(req));
  }

  Vals realize(SiteRequest req) {
    req.dist.check_shapes();
    if (!realized_names_.insert(req.name).second) throw DuplicateSite(req.name);

    const size_t n = static_cast<size_t>(req.dist.len);
    Vals value;
    value.reserve(n);

    if (req.is_observed()) {
      for (double v : *req.observed) value.push_back(Var(v));
    } else if (mode_ == Mode::kForward) {
      StreamRng rng(seed_, req.name);
      for (size_t i = 0; i < n; ++i) {
        switch (req.dist.kind) {
          case DistKind::kNormal: {
            const Var& sd = req.dist.scale_at(i);
            if (!(sd.v > 0.0) || !std::isfinite(sd.v))
              throw InvalidDistribution("Normal scale for site '" + req.name + "'");
            value.push_back(Var(req.dist.loc_at(i).v + sd.v * rng.normal(i)));
            break;
          }
          case DistKind::kBernoulliLogit:
            value.push_back(Var(rng.bernoulli(i, sigmoid(req.dist.loc_at(i).v))));
            break;
        }
      }
    } else {  // Replay
      const LayoutSlot* slot =
          (latent_count_ < layout_->slots.size()) ? &layout_->slots[latent_count_] : nullptr;
      if (slot == nullptr || slot->name != req.name || slot->len != n)
        throw DimensionMismatch("latent site '" + req.name +
                                "' does not match the layout (site order must be fixed)");
      for (size_t i = 0; i < n; ++i) value.push_back(input_[slot->offset + i]);
      cursor_ += n;
    }

    if (!req.is_observed()) {
      latent_sites_.emplace_back(req.name, req.dist.len);
      ++latent_count_;
      realized_latents_[req.name] = value;
    }

    Var lp = site_log_prob(req.dist, value, req.name);
    log_prob_ += lp;

    if (mode_ == Mode::kForward) {
      TraceEntry e;
      e.name = req.name;
      e.value.reserve(n);
      for (const Var& v : value) e.value.push_back(v.v);
      e.log_prob = lp.v;
      e.observed = req.is_observed();
      trace_.entries.push_back(std::move(e));
    } else {
      site_dists_.emplace(req.name, req.dist);
    }
    return value;
  }

  static Var site_log_prob(const Dist& d, const Vals& value, const std::string& name) {
    switch (d.kind) {
      case DistKind::kNormal:
        return normal_lpdf_sum(std::span<const Var>(value.data(), value.size()),
                               std::span<const Var>(d.loc.data(), d.loc.size()),
                               std::span<const Var>(d.scale.data(), d.scale.size()));
      case DistKind::kBernoulliLogit: {
        std::vector<double> y;
        y.reserve(value.size());
        for (const Var& v : value) y.push_back(v.v);
        return bernoulli_logit_lpmf_sum(std::span<const double>(y.data(), y.size()),
                                        std::span<const Var>(d.loc.data(), d.loc.size()));
      }
    }
    throw Error("unreachable distribution kind at site '" + name + "'");
  }

  const ModelProgram& model_;
  Mode mode_;
  uint64_t seed_ = 0;
  const Layout* layout_ = nullptr;
  std::span<const Var> input_;
  size_t cursor_ = 0;
  size_t latent_count_ = 0;
  size_t dispatch_depth_ = 0;

  std::set<std::string> realized_names_;
  std::vector<std::pair<std::string, int>> latent_sites_;
  std::map<std::string, Vals> realized_latents_;
  std::map<std::string, Vals> derived_;
  std::map<std::string, Dist> site_dists_;
  Trace trace_;
  Var log_prob_ = Var(0.0);
};

// Runs the model forward, drawing every unobserved site from (seed, site
// name, element index) and returns the trace in realisation order.
inline Trace run_forward(const ModelProgram& m, uint64_t seed) {
  Executor ex(m, seed);
  ex.run();
  return ex.trace();
}

// Returns a copy of the model with `stack` attached outside any existing
// handlers (requests meet the new handlers first).
inline ModelProgram handle(ModelProgram m, std::vector<Handler> stack) {
  stack.insert(stack.end(), std::make_move_iterator(m.handlers.begin()),
               std::make_move_iterator(m.handlers.end()));
  m.handlers = std::move(stack);
  return m;
}

// Names announced by the model body itself (before any handler rewriting).
inline std::set<std::string> body_site_names(const ModelProgram& m) {
  ModelProgram bare;
  bare.body = m.body;
  bare.data = m.data;
  std::set<std::string> names;
  bare.handlers.push_back([&names](SiteRequest req, const NextFn& next, Executor&) {
    names.insert(req.name);
    return next(std::move(req));
  });
  Executor ex(bare, 0);
  ex.run();
  return names;
}

// Returns a copy of the model conditioned on `data`.  Every key must name a
// site the model body announces; values must match the site's event length.
inline ModelProgram condition(ModelProgram m,
                              const std::map<std::string, std::vector<double>>& data) {
  const std::set<std::string> names = body_site_names(m);
  for (const auto& [k, v] : data) {
    if (!names.count(k)) throw UnknownSite(k);
    m.data[k] = v;
  }
  return m;
}

// The joint log density of a model over its latent sites, as a function of
// a flat vector in layout order.  Layout is discovered by one forward
// probe; replays then require the same sites in the same order.
class LogJointFn {
 public:
  explicit LogJointFn(ModelProgram m) : model_(std::make_shared<ModelProgram>(std::move(m))) {
    Executor probe(*model_, kProbeSeed);
    probe.run();
    size_t off = 0;
    for (const auto& [name, len] : probe.latent_sites()) {
      layout_.slots.push_back({name, off, static_cast<size_t>(len)});
      off += static_cast<size_t>(len);
    }
    layout_.dim = off;
    if (layout_.dim == 0)
      throw DimensionMismatch("model has no latent sites to evaluate over");
  }

  const Layout& layout() const { return layout_; }
  size_t dim() const { return layout_.dim; }
  const ModelProgram& model() const { return *model_; }

  Var eval(std::span<const Var> x) const {
    if (x.size() != layout_.dim)
      throw DimensionMismatch("log joint expects " + std::to_string(layout_.dim) +
                              " values, got " + std::to_string(x.size()));
    Executor ex(*model_, layout_, x);
    ex.run();
    return ex.log_prob();
  }

  double operator()(std::span<const double> x) const {
    std::vector<Var> in;
    in.reserve(x.size());
    for (double xi : x) in.push_back(Var(xi));
    return eval(std::span<const Var>(in.data(), in.size())).v;
  }

  GradResult value_and_grad(std::span<const double> x) const {
    return grad([this](std::span<const Var> in) { return eval(in); }, x);
  }

 private:
  static constexpr uint64_t kProbeSeed = 0x5eedu;
  std::shared_ptr<ModelProgram> model_;
  Layout layout_;
};

inline LogJointFn make_log_joint(const ModelProgram& m) { return LogJointFn(m); }

}  // namespace reparam
