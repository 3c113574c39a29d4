#include "nesyrs/schema.hpp"

#include <set>
#include <stdexcept>

namespace nesyrs {

int ConceptSchema::var_index(const std::string& name) const {
  for (size_t i = 0; i < vars.size(); ++i)
    if (vars[i].name == name) return static_cast<int>(i);
  return -1;
}

int ConceptSchema::group_of_object(int obj) const {
  for (size_t g = 0; g < groups.size(); ++g)
    for (int o : groups[g])
      if (o == obj) return static_cast<int>(g);
  return -1;
}

long ConceptSchema::object_domain(int obj) const {
  long d = 1;
  for (int vi : objects[obj]) d *= vars[vi].domain;
  return d;
}

int ConceptSchema::object_value(const std::vector<int>& assignment, int obj) const {
  long v = 0;
  for (int vi : objects[obj]) v = v * vars[vi].domain + assignment[vi];
  return static_cast<int>(v);
}

void ConceptSchema::decode_object_value(int obj, int value, std::vector<int>& assignment) const {
  const auto& vs = objects[obj];
  for (size_t k = vs.size(); k-- > 0;) {
    int vi = vs[k];
    assignment[vi] = value % vars[vi].domain;
    value /= vars[vi].domain;
  }
}

std::vector<int> ConceptSchema::group_layout(int group) const {
  std::vector<int> doms;
  if (groups[group].empty()) return doms;
  for (int vi : objects[groups[group][0]]) doms.push_back(vars[vi].domain);
  return doms;
}

double ConceptSchema::joint_size() const {
  double s = 1;
  for (const auto& v : vars) s *= v.domain;
  return s;
}

void ConceptSchema::validate() const {
  std::set<std::string> names;
  for (const auto& v : vars) {
    if (v.domain < 2) throw std::runtime_error("schema: domain of '" + v.name + "' must be >= 2");
    if (!names.insert(v.name).second)
      throw std::runtime_error("schema: duplicate variable name '" + v.name + "'");
  }
  std::vector<int> var_seen(vars.size(), 0);
  for (const auto& obj : objects)
    for (int vi : obj) {
      if (vi < 0 || vi >= static_cast<int>(vars.size()))
        throw std::runtime_error("schema: object references unknown variable");
      var_seen[vi]++;
    }
  for (size_t i = 0; i < vars.size(); ++i)
    if (var_seen[i] != 1)
      throw std::runtime_error("schema: variable '" + vars[i].name +
                               "' must belong to exactly one object");
  std::vector<int> obj_seen(objects.size(), 0);
  for (const auto& grp : groups)
    for (int o : grp) {
      if (o < 0 || o >= static_cast<int>(objects.size()))
        throw std::runtime_error("schema: group references unknown object");
      obj_seen[o]++;
    }
  for (size_t i = 0; i < objects.size(); ++i)
    if (obj_seen[i] != 1)
      throw std::runtime_error("schema: every object must belong to exactly one group");
  // Objects within a group must share one attribute layout.
  for (size_t g = 0; g < groups.size(); ++g) {
    auto layout = group_layout(static_cast<int>(g));
    for (int o : groups[g]) {
      if (objects[o].size() != layout.size())
        throw std::runtime_error("schema: group objects have differing layouts");
      for (size_t k = 0; k < layout.size(); ++k)
        if (vars[objects[o][k]].domain != layout[k])
          throw std::runtime_error("schema: group objects have differing layouts");
    }
  }
}

}  // namespace nesyrs
