#pragma once

#include <vector>

#include "disenhcn/loss.hpp"
#include "disenhcn/model.hpp"

namespace disenhcn {

/// Fixed desk-size instance for gradient verification: 4 users, 3 locations,
/// 2 times, 3 activities, d=6, one layer, every hyperedge type enabled.
struct GradCheckSetup {
  double lambda = 3e-5;
  double gamma = 3e-3;
  double h = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 20240601;
  FusionMode fusion = FusionMode::Attention;
  ConvMode conv = ConvMode::EffHGConv;
};

inline DatasetBundle gradcheck_bundle() {
  DatasetBundle bundle;
  for (int i = 0; i < 4; ++i) bundle.vocab.intern(Vocab::kUser, "u" + std::to_string(i));
  for (int i = 0; i < 3; ++i) bundle.vocab.intern(Vocab::kLocation, "l" + std::to_string(i));
  for (int i = 0; i < 2; ++i) bundle.vocab.intern(Vocab::kTime, "t" + std::to_string(i));
  for (int i = 0; i < 3; ++i) bundle.vocab.intern(Vocab::kActivity, "a" + std::to_string(i));
  bundle.train = {{0, 0, 0, 0}, {0, 1, 1, 1}, {1, 0, 1, 0}, {1, 2, 0, 2},
                  {2, 1, 0, 1}, {2, 2, 1, 2}, {3, 0, 0, 2}, {3, 1, 1, 0}};
  bundle.rebuild_observed();
  return bundle;
}

/// Runs the full-model finite-difference gradient check on the fixed tiny
/// instance: forward + total loss on a deterministic batch, every parameter
/// entry checked against central differences.
inline ad::GradCheckReport run_model_gradcheck(const GradCheckSetup& setup) {
  auto bundle = gradcheck_bundle();
  ModelConfig cfg;
  cfg.d = 6;
  cfg.layers = 1;
  cfg.fusion = setup.fusion;
  cfg.conv = setup.conv;

  auto inc = build_incidence(bundle);
  auto adj = build_equivalent_adjacencies(inc, cfg.enabled_types);
  GraphContext ctx(adj);

  Rng rng(setup.seed);
  ParameterSet params = init_params(cfg, bundle.vocab, rng);

  // deterministic batch: every training record once, fixed negatives
  PairwiseBatch batch;
  for (const auto& r : bundle.train) {
    batch.users.push_back(r.u);
    batch.locations.push_back(r.l);
    batch.times.push_back(r.t);
    batch.positives.push_back(r.a);
    std::int32_t neg = 0;
    while (bundle.observed.contains(r.u, r.l, r.t, neg)) ++neg;
    batch.negatives.push_back(neg);
  }
  batch.finalize_unique_users();

  auto loss_fn = [&](std::vector<DenseMatrix>* grads) {
    ad::Tape tape;
    auto pn = make_parameter_nodes(tape, params, grads != nullptr);
    auto fwd = forward(tape, pn, ctx, cfg);
    auto nodes = total_loss(tape, pn, fwd, batch, setup.lambda, setup.gamma, L2Scope::Touched);
    const double value = nodes.total->value.at(0, 0);
    if (grads) {
      tape.backward(nodes.total);
      std::vector<ad::Node*> leaves{pn.p0, pn.q0, pn.r0, pn.s0};
      for (int s = 0; s < 3; ++s) {
        leaves.push_back(pn.w_att[s]);
        leaves.push_back(pn.b_att[s]);
        leaves.push_back(pn.a_att[s]);
      }
      for (auto& [type, node] : pn.w_conv) leaves.push_back(node);
      for (ad::Node* leaf : leaves)
        grads->push_back(leaf->grad.n_rows ? leaf->grad
                                           : DenseMatrix(leaf->value.n_rows, leaf->value.n_cols));
    }
    return value;
  };

  return ad::finite_diff_check(params.named_tables(), loss_fn, setup.h, setup.tolerance);
}

}  // namespace disenhcn
