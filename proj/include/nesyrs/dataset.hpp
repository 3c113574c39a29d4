#pragma once

#include <vector>

#include "nesyrs/schema.hpp"

namespace nesyrs {

struct Example {
  std::vector<double> x;  // concatenated object slots
  Assignment g;           // ground-truth concepts (hidden from training losses)
  long y;                 // label, always beta_K(g)
};

using Split = std::vector<Example>;

/** A concept annotation revealed by the oracle. */
struct Reveal {
  int example = 0;  // index into the training split
  int var = 0;      // schema variable index
  int value = 0;
};

}  // namespace nesyrs
