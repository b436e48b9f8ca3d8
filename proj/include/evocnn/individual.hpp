#pragma once

#include <string>

#include "evocnn/genome.hpp"

namespace evocnn {

// Genome plus its evaluation state for one generation.
struct Individual {
  Genome genome;
  std::string key;  // canonical_key(genome)
  double accuracy = 0.0;
  double eval_wall_seconds = 0.0;
  double fitness = 0.0;  // may be negative under wall-time regularisation
  int epochs_trained = 0;
  std::string checkpoint_ref;  // empty when no checkpoint exists
};

}  // namespace evocnn
