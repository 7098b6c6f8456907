#pragma once

// Reparameterising handlers: full non-centring and partial centring.
//
// Both handlers rewrite latent Normal sites into auxiliary sites and
// reconstruct the original value for the model downstream:
//
//   non-centred    z_std ~ N(0, 1)                    z = mu + sigma * z_std
//   partial (lam)  z_vip ~ N(lam*mu, sigma^lam)       z = mu + sigma^(1-lam) * (z_vip - lam*mu)
//
// lam = 1 recovers the centred site, lam = 0 the fully non-centred one,
// and sigma^lam is always evaluated as exp(lam * log sigma) so the forward
// and inverse maps share their arithmetic exactly.
//
// A site is eligible for rewriting when it is latent, Normal, and not
// already standard normal.  "Standard normal" is a structural property —
// loc and scale are plain constants 0 and 1, not merely equal to them at
// the current point — decided once per site by a differentiating probe and
// then frozen, so forward runs, plain replays and taped replays all agree
// on the rewritten structure.

#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reparam/autodiff.hpp"
#include "reparam/errors.hpp"
#include "reparam/model.hpp"

namespace reparam {

// Latent Normal sites eligible for recentring, in emission order.
inline std::vector<std::pair<std::string, int>> reparameterisable_sites(
    const ModelProgram& m) {
  LogJointFn lj(m);

  auto found = std::make_shared<std::vector<std::pair<std::string, int>>>();
  ModelProgram probe = handle(lj.model(),
                              {[found](SiteRequest req, const NextFn& next, Executor&) {
                                if (!req.is_observed() && req.dist.kind == DistKind::kNormal &&
                                    !req.dist.is_const_normal(0.0, 1.0))
                                  found->emplace_back(req.name, req.dist.len);
                                return next(std::move(req));
                              }});

  // Replay with a live tape so latent-dependent parameters are tracked and
  // the constancy test is structural rather than value-based.
  Tape tape;
  TapeScope scope(&tape);
  std::vector<Var> x;
  x.reserve(lj.dim());
  for (size_t i = 0; i < lj.dim(); ++i) x.push_back(tape_input(tape, 0.0));
  Executor ex(probe, lj.layout(), std::span<const Var>(x.data(), x.size()));
  ex.run();
  return *found;
}

// Per-site partial-centring coefficients, one per scalar element, keyed by
// the original site names in emission order.  All values lie in [0, 1].
struct ParameterisationParams {
  std::vector<std::pair<std::string, std::vector<double>>> sites;

  size_t dim() const {
    size_t n = 0;
    for (const auto& s : sites) n += s.second.size();
    return n;
  }

  const std::vector<double>* find(std::string_view name) const {
    for (const auto& s : sites)
      if (s.first == name) return &s.second;
    return nullptr;
  }

  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(dim());
    for (const auto& s : sites) out.insert(out.end(), s.second.begin(), s.second.end());
    return out;
  }

  static ParameterisationParams constant(
      const std::vector<std::pair<std::string, int>>& site_shapes, double value) {
    ParameterisationParams p;
    for (const auto& [name, len] : site_shapes)
      p.sites.emplace_back(name, std::vector<double>(static_cast<size_t>(len), value));
    return p;
  }
};

// Live coefficient storage shared between a partial-centring handler and
// the optimiser that tunes the coefficients.  During optimisation the
// bound values are tape inputs; afterwards they are frozen constants.
struct LambdaStore {
  std::vector<std::pair<std::string, int>> sites;  // emission order
  std::map<std::string, Vals> bound;

  size_t dim() const {
    size_t n = 0;
    for (const auto& s : sites) n += static_cast<size_t>(s.second);
    return n;
  }

  void bind_flat(std::span<const Var> lam) {
    if (lam.size() != dim())
      throw DimensionMismatch("coefficient vector does not match reparameterisable sites");
    size_t off = 0;
    for (const auto& [name, len] : sites) {
      Vals v(lam.begin() + off, lam.begin() + off + len);
      bound[name] = std::move(v);
      off += static_cast<size_t>(len);
    }
  }

  void bind(const ParameterisationParams& p) {
    if (p.sites.size() != sites.size())
      throw InvalidParameterisation("expected coefficients for exactly the reparameterisable sites");
    for (size_t i = 0; i < sites.size(); ++i) {
      const auto& [name, len] = sites[i];
      if (p.sites[i].first != name || p.sites[i].second.size() != static_cast<size_t>(len))
        throw InvalidParameterisation("coefficient keys must match site '" + name + "' (length " +
                                      std::to_string(len) + ")");
      Vals v;
      v.reserve(p.sites[i].second.size());
      for (double l : p.sites[i].second) {
        if (!(l >= 0.0 && l <= 1.0))
          throw InvalidParameterisation("coefficient for site '" + name + "' outside [0, 1]");
        v.push_back(Var(l));
      }
      bound[name] = std::move(v);
    }
  }

  ParameterisationParams snapshot() const {
    ParameterisationParams p;
    for (const auto& [name, len] : sites) {
      std::vector<double> v;
      v.reserve(static_cast<size_t>(len));
      for (const Var& l : bound.at(name)) v.push_back(l.v);
      p.sites.emplace_back(name, std::move(v));
    }
    return p;
  }
};

namespace detail {

inline std::shared_ptr<std::set<std::string>> site_name_set(
    const std::vector<std::pair<std::string, int>>& sites) {
  auto s = std::make_shared<std::set<std::string>>();
  for (const auto& [name, len] : sites) s->insert(name);
  return s;
}

}  // namespace detail

inline Handler make_ncp_handler(std::shared_ptr<const std::set<std::string>> sites) {
  return [sites](SiteRequest req, const NextFn& next, Executor& ex) -> Vals {
    if (req.is_observed() || req.dist.kind != DistKind::kNormal || !sites->count(req.name))
      return next(std::move(req));
    const int n = req.dist.len;
    SiteRequest sub{req.name + "_std",
                    Dist::normal_vec(n, {Var(0.0)}, {Var(1.0)}),
                    std::nullopt};
    Vals zt = next(std::move(sub));
    Vals z;
    z.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const size_t u = static_cast<size_t>(i);
      z.push_back(req.dist.loc_at(u) + req.dist.scale_at(u) * zt[u]);
    }
    ex.record_derived(req.name, z);
    return z;
  };
}

inline Handler make_vip_handler(std::shared_ptr<const LambdaStore> store,
                                std::shared_ptr<const std::set<std::string>> sites) {
  return [store, sites](SiteRequest req, const NextFn& next, Executor& ex) -> Vals {
    if (req.is_observed() || req.dist.kind != DistKind::kNormal || !sites->count(req.name))
      return next(std::move(req));
    const int n = req.dist.len;
    const Vals& lam = store->bound.at(req.name);
    if (lam.size() != static_cast<size_t>(n))
      throw DimensionMismatch("coefficient length for site '" + req.name + "'");

    // Shared scales fold their log into one node.
    Vals log_scale;
    log_scale.reserve(req.dist.scale.size());
    for (const Var& s : req.dist.scale) log_scale.push_back(log(s));
    auto log_scale_at = [&](size_t i) -> const Var& {
      return log_scale[log_scale.size() == 1 ? 0 : i];
    };

    Vals loc, scale;
    loc.reserve(static_cast<size_t>(n));
    scale.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const size_t u = static_cast<size_t>(i);
      loc.push_back(lam[u] * req.dist.loc_at(u));
      scale.push_back(exp(lam[u] * log_scale_at(u)));
    }
    SiteRequest sub{req.name + "_vip",
                    Dist::normal_vec(n, std::move(loc), std::move(scale)),
                    std::nullopt};
    Vals zt = next(std::move(sub));

    Vals z;
    z.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const size_t u = static_cast<size_t>(i);
      const Var residual = zt[u] - lam[u] * req.dist.loc_at(u);
      z.push_back(req.dist.loc_at(u) + exp((Var(1.0) - lam[u]) * log_scale_at(u)) * residual);
    }
    ex.record_derived(req.name, z);
    return z;
  };
}

// Invertible map between a reparameterised latent space and the original
// one.  forward() runs the transformed model, inverse() runs the original
// model to recover each site's location and scale at the given point.
class ReparamBijection {
 public:
  enum class SiteMode { kIdentity, kNcp, kVip };

  ReparamBijection(std::shared_ptr<const ModelProgram> original,
                   std::shared_ptr<const ModelProgram> transformed,
                   std::map<std::string, SiteMode> modes,
                   std::shared_ptr<const LambdaStore> store)
      : original_(std::move(original)),
        transformed_(std::move(transformed)),
        modes_(std::move(modes)),
        store_(std::move(store)),
        original_layout_(LogJointFn(*original_).layout()),
        transformed_layout_(LogJointFn(*transformed_).layout()) {
    if (original_layout_.dim != transformed_layout_.dim)
      throw DimensionMismatch("reparameterisation changed the latent dimension");
    for (size_t i = 0; i < original_layout_.slots.size(); ++i) {
      const LayoutSlot& a = original_layout_.slots[i];
      const LayoutSlot& b = transformed_layout_.slots[i];
      if (a.offset != b.offset || a.len != b.len)
        throw DimensionMismatch("reparameterisation must preserve site order and shape");
    }
  }

  const Layout& original_layout() const { return original_layout_; }
  const Layout& transformed_layout() const { return transformed_layout_; }

  // Transformed coordinates -> original coordinates.
  std::vector<double> forward(std::span<const double> zt) const {
    if (zt.size() != transformed_layout_.dim)
      throw DimensionMismatch("bijection forward: wrong input length");
    std::vector<Var> in;
    in.reserve(zt.size());
    for (double v : zt) in.push_back(Var(v));
    Executor ex(*transformed_, transformed_layout_, std::span<const Var>(in.data(), in.size()));
    ex.run();
    std::vector<double> out(original_layout_.dim, 0.0);
    for (const LayoutSlot& slot : original_layout_.slots) {
      const Vals* src = nullptr;
      auto d = ex.derived().find(slot.name);
      if (d != ex.derived().end()) {
        src = &d->second;
      } else {
        auto r = ex.realized_latents().find(slot.name);
        if (r == ex.realized_latents().end())
          throw UnknownSite(slot.name + " (not produced by the transformed model)");
        src = &r->second;
      }
      for (size_t i = 0; i < slot.len; ++i) out[slot.offset + i] = (*src)[i].v;
    }
    return out;
  }

  // Original coordinates -> transformed coordinates.
  std::vector<double> inverse(std::span<const double> z) const {
    if (z.size() != original_layout_.dim)
      throw DimensionMismatch("bijection inverse: wrong input length");
    std::vector<Var> in;
    in.reserve(z.size());
    for (double v : z) in.push_back(Var(v));
    Executor ex(*original_, original_layout_, std::span<const Var>(in.data(), in.size()));
    ex.run();
    std::vector<double> out(z.begin(), z.end());
    for (const LayoutSlot& slot : original_layout_.slots) {
      const SiteMode mode = mode_of(slot.name);
      if (mode == SiteMode::kIdentity) continue;
      const Dist& dist = ex.site_dists().at(slot.name);
      const std::vector<double>* lam = nullptr;
      std::vector<double> lam_values;
      if (mode == SiteMode::kVip) {
        const Vals& bound = store_->bound.at(slot.name);
        lam_values.reserve(bound.size());
        for (const Var& l : bound) lam_values.push_back(l.v);
        lam = &lam_values;
      }
      for (size_t i = 0; i < slot.len; ++i) {
        const double mu = dist.loc_at(i).v;
        const double sd = dist.scale_at(i).v;
        const double zi = z[slot.offset + i];
        if (mode == SiteMode::kNcp) {
          out[slot.offset + i] = (zi - mu) / sd;
        } else {
          const double l = (*lam)[i];
          out[slot.offset + i] = l * mu + (zi - mu) / std::exp((1.0 - l) * std::log(sd));
        }
      }
    }
    return out;
  }

 private:
  SiteMode mode_of(const std::string& name) const {
    auto it = modes_.find(name);
    return it == modes_.end() ? SiteMode::kIdentity : it->second;
  }

  std::shared_ptr<const ModelProgram> original_;
  std::shared_ptr<const ModelProgram> transformed_;
  std::map<std::string, SiteMode> modes_;
  std::shared_ptr<const LambdaStore> store_;
  Layout original_layout_;
  Layout transformed_layout_;
};

struct NcpModel {
  ModelProgram model;
  ReparamBijection bijection;
};

// Rewrites every eligible latent Normal site of `m` into a standard-normal
// site named "<name>_std".  Already standard-normal sites pass through, so
// the transform is idempotent.
inline NcpModel make_ncp(const ModelProgram& m) {
  auto sites = reparameterisable_sites(m);
  auto names = detail::site_name_set(sites);
  auto original = std::make_shared<const ModelProgram>(m);
  auto transformed =
      std::make_shared<const ModelProgram>(handle(m, {make_ncp_handler(names)}));
  std::map<std::string, ReparamBijection::SiteMode> modes;
  for (const auto& [name, len] : sites) modes[name] = ReparamBijection::SiteMode::kNcp;
  return NcpModel{*transformed,
                  ReparamBijection(original, transformed, std::move(modes), nullptr)};
}

struct VipModel {
  ModelProgram model;
  ReparamBijection bijection;
  std::shared_ptr<LambdaStore> store;
};

// Rewrites every eligible latent Normal site of `m` into a partially
// centred site named "<name>_vip" with the given coefficients.
inline VipModel make_vip(const ModelProgram& m, const ParameterisationParams& params) {
  auto sites = reparameterisable_sites(m);
  auto store = std::make_shared<LambdaStore>();
  store->sites = sites;
  store->bind(params);
  auto names = detail::site_name_set(sites);
  auto original = std::make_shared<const ModelProgram>(m);
  auto transformed = std::make_shared<const ModelProgram>(
      handle(m, {make_vip_handler(store, names)}));
  std::map<std::string, ReparamBijection::SiteMode> modes;
  for (const auto& [name, len] : sites) modes[name] = ReparamBijection::SiteMode::kVip;
  return VipModel{*transformed,
                  ReparamBijection(original, transformed, std::move(modes), store), store};
}

}  // namespace reparam
