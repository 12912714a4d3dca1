// SPDX-License-Identifier: Apache-2.0
//
// The entropy-regularized routing update for one node: closed form versus a
// brute-force search of the simplex, and how the distribution sharpens with λ.
#include <cstdio>

#include "gnnmoe/theory.hpp"

int main() {
  const std::vector<double> base{0.4, 0.3, 0.2, 0.1};
  const std::vector<double> gains{0.5, 1.5, -0.5, 0.0};
  const double eta = 0.5;

  std::printf("lambda   PP      PT      TP      TT      entropy  |closed - brute|_1\n");
  for (double lambda : {0.0, 0.5, 1.0, 1.5, 1.9}) {
    const gnnmoe::RoutingInstance inst{base, gains, eta, lambda};
    const auto pi = gnnmoe::mirror_descent_update(inst);
    const auto bf = gnnmoe::brute_force_argmin(inst, {4, 60});
    std::printf("%-8.2f %.4f  %.4f  %.4f  %.4f  %.4f   %.2e\n", lambda, pi[0], pi[1], pi[2], pi[3],
                gnnmoe::entropy(pi), gnnmoe::l1_distance(pi, bf));
  }

  // Smallest λ for which a uniform router puts at most ε mass outside the top expert.
  const double theta = gnnmoe::epsilon_topk_threshold(4, 1, 0.1, eta, 1.0);
  std::printf("eps-soft top-1 threshold (eps 0.1, gap 1): lambda >= %.4f (upper limit %.1f)\n", theta, 1.0 / eta);
}
