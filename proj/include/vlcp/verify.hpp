#pragma once

// Property suites run by `vlcp verify` and the acceptance binary. Every
// check runs in f64 unless it is about the f32 training path.

#include <string>
#include <vector>

#include "vlcp/model.hpp"

namespace vlcp::verify {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Tiny f64 model and a two-sample batch with different grid shapes, shared
// by the gradient suites.
ModelConfig tiny_model_config();
std::vector<Sample> tiny_batch(const ModelConfig& cfg);

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t elements = 0;
  std::size_t tensors = 0;
  std::string worst;  // parameter name holding the worst element
  double seconds = 0.0;
};

// d(L_dec + alpha L_align)/d(theta) for every parameter of the tiny model
// against central differences with step h. Targets and prototypes are held
// at their base values so the loss is a plain function of theta.
GradcheckReport model_gradcheck(double alpha = 0.05, double h = 1e-5);

std::vector<Check> gradcheck_suite();
std::vector<Check> rope_suite(int instances = 100);

struct SinkhornSweep {
  double score_scale = 1.0;
  double worst_tv = 0.0;  // 3 iterations against 1000
  int failures = 0;       // instances above 1e-3
  int instances = 0;
};

// Oracle comparison on random K <= 16, B <= 8 instances with N(0, scale^2)
// scores and a random positive prior.
SinkhornSweep sinkhorn_oracle_sweep(double score_scale, bool two_sided, int instances,
                                    std::uint64_t seed);

std::vector<Check> sinkhorn_suite(int instances = 200);
std::vector<Check> freeze_suite();

// "gradcheck", "sinkhorn", "rope", "freeze" or "all"; ConfigError otherwise.
std::vector<Check> run_suite(const std::string& name);

}  // namespace vlcp::verify
