// Trains the toy MLP at 95% sparsity with and without the rank term and
// prints the per-layer delta-ranks of the resulting sparse weights.
//
//   ./toy_demo [lambda]

#include "rankprune/data.hpp"
#include "rankprune/model.hpp"
#include "rankprune/trainer.hpp"

#include <cstdio>
#include <cstdlib>
#include <vector>

using namespace rankprune;

int main(int argc, char** argv) {
  const double lambda = argc > 1 ? std::atof(argv[1]) : 0.1;

  SyntheticDatasetSpec spec;
  spec.seed = 101;
  const Dataset train_set = make_blobs(spec);
  SyntheticDatasetSpec held = spec;
  held.samples_per_class = 100;
  const Dataset eval_set = make_blobs(held, 1);

  const std::vector<LayerSpec> layers{parse_layer_spec("dense:128:relu"), parse_layer_spec("dense:128:relu"),
                                      parse_layer_spec("dense:10:none")};
  for (double lam : {0.0, lambda}) {
    TrainConfig cfg;
    cfg.schedule.final_sparsity = 0.95;
    cfg.schedule.prune_steps = 1000;
    cfg.schedule.total_steps = 1500;
    cfg.rank.lambda = lam;
    const TrainResult r = train(cfg, Network({64}, layers, 1), train_set, &eval_set);
    std::printf("lambda %-5g sparsity %.4f  eval acc %.3f  avg delta-rank %.3f  layers:", lam, r.net.sparsity(),
                r.metrics.back().eval_accuracy.value_or(0.0), average_delta_rank(r.net, 0.1));
    for (const Layer& l : r.net.layers())
      std::printf(" %zu", delta_rank(reshape_to_matrix(l), 0.1));
    std::printf("\n");
  }
}
