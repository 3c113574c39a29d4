#pragma once

#include <string>
#include <vector>

namespace nesyrs {

struct VariableSpec {
  std::string name;
  int domain = 2;  // categorical domain size, >= 2
};

/**
 * Concept schema: categorical variables partitioned into objects (the units
 * the renderer emits and the encoder consumes), and objects partitioned into
 * groups that share one encoder.  All objects in a group must have the same
 * attribute layout (same list of variable domains).
 */
struct ConceptSchema {
  std::vector<VariableSpec> vars;
  std::vector<std::vector<int>> objects;  // variable indices per object
  std::vector<std::vector<int>> groups;   // object indices per group

  int var_index(const std::string& name) const;
  int group_of_object(int obj) const;

  /** Product of the domains of one object's variables (mixed-radix size). */
  long object_domain(int obj) const;

  /** Mixed-radix encoding of an object's variable values, first var most
   *  significant. */
  int object_value(const std::vector<int>& assignment, int obj) const;
  void decode_object_value(int obj, int value, std::vector<int>& assignment) const;

  /** Domains of one group's object layout (all objects identical). */
  std::vector<int> group_layout(int group) const;

  double joint_size() const;

  /** Throws std::runtime_error on malformed schemas. */
  void validate() const;
};

/** One value per schema variable, indexed like ConceptSchema::vars. */
using Assignment = std::vector<int>;

/** Per-variable categorical probability vectors, indexed like vars. */
using Factors = std::vector<std::vector<double>>;

}  // namespace nesyrs
