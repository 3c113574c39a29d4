#pragma once

#include <iosfwd>
#include <set>

#include "nesyrs/dataset.hpp"
#include "nesyrs/knowledge.hpp"
#include "nesyrs/rng.hpp"

#include "json.hpp"

namespace nesyrs {

/** Place the centers of two object values in one group at a fixed chordal
 *  distance, modelling visually confusable classes. */
struct CenterOverlap {
  int group = 0;
  int value_a = 0;
  int value_b = 0;
  double distance = 0.5;
};

struct RendererParams {
  int dim = 16;        // embedding dimension per object slot
  double sigma = 0.1;  // per-dimension Gaussian noise
  uint64_t seed = 0;   // cluster-center stream
  std::vector<CenterOverlap> overlaps;
};

struct SplitSizes {
  int train = 0, val = 0, test = 0, ood = 0;
};

/** How the out-of-distribution support is obtained. */
enum class OodRule {
  None,           // explicit list (possibly empty)
  SumCompletion,  // all value pairs up to ood_max_value not in the support
};

struct TaskSpec {
  std::string name;
  ConceptSchema schema;
  std::string knowledge;  // DSL source
  std::vector<Assignment> support;
  std::vector<double> prior;  // over support rows; empty = uniform
  RendererParams renderer;
  SplitSizes splits;
  OodRule ood_rule = OodRule::None;
  std::vector<Assignment> ood;
  int ood_max_value = -1;  // SumCompletion: largest renderable value

  void validate() const;  // throws std::runtime_error
};

/** Resolved OOD concept support; throws if it overlaps the training support. */
std::vector<Assignment> ood_support(const TaskSpec& spec);

struct GeneratedDataset {
  Split train, val, test, ood;
  // [group][object value][dim] unit-norm cluster centers.
  std::vector<std::vector<std::vector<double>>> centers;
};

/**
 * Draw all splits: ground-truth tuples from the support prior, inputs as
 * center + noise per object slot.  Fails if nearest-center decoding does not
 * recover every generated tuple exactly (the invertibility check).
 */
GeneratedDataset generate_dataset(const TaskSpec& spec, uint64_t seed);

/** mnist_half, mnist_even_odd, kandinsky_mini, or traffic_mini. */
TaskSpec builtin_task(const std::string& name);

/** Ground-truth concept annotator with an idempotent reveal log. */
class Oracle {
 public:
  Oracle(const Split* train, const ConceptSchema* schema)
      : train_(train), schema_(schema) {}

  /** Returns the hidden value; repeat reveals do not grow the budget. */
  int reveal(int example, const std::string& var_name);
  int reveal(int example, int var);

  long budget_spent() const { return static_cast<long>(log_.size()); }
  const std::vector<Reveal>& log() const { return log_; }

 private:
  const Split* train_;
  const ConceptSchema* schema_;
  std::set<std::pair<int, int>> seen_;
  std::vector<Reveal> log_;
};

nlohmann::json task_to_json(const TaskSpec& spec);
TaskSpec task_from_json(const nlohmann::json& j);

/** Content hash of the canonical JSON form, hex-encoded. */
std::string task_hash(const TaskSpec& spec);

/** Columns: split, x components, g components, y. */
void export_dataset_csv(const GeneratedDataset& data, const ConceptSchema& schema,
                        std::ostream& out);

}  // namespace nesyrs
