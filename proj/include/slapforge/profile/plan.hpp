#pragma once

#include <string>
#include <vector>

#include "slapforge/core/model.hpp"
#include "slapforge/error.hpp"
#include "slapforge/profile/profile.hpp"

namespace slapforge::profile {

struct PartSpec {
  std::string name;
  std::string recipe;
  Section options;  // fully resolved, recipe included

  const std::string* option(const std::string& key) const { return options.get(key); }
  std::string option_or(const std::string& key, std::string fallback) const {
    const auto* v = options.get(key);
    return v ? *v : fallback;
  }

  bool operator==(const PartSpec&) const = default;
};

enum class TargetKind { software, partition };

struct InstallPlan {
  std::vector<PartSpec> parts;
  TargetKind target = TargetKind::software;

  bool operator==(const InstallPlan&) const = default;
};

// One PartSpec per name in [buildout] parts, declaration order preserved.
inline InstallPlan plan(const Profile& resolved, TargetKind target = TargetKind::software) {
  const auto* parts = resolved.option("buildout", "parts");
  if (!parts) throw PlanError("buildout", "profile has no [buildout] parts option");
  InstallPlan out;
  out.target = target;
  for (const auto& name : split_words(*parts)) {
    const auto* section = resolved.sections.get(name);
    if (!section) throw PlanError(name, "listed in parts but no such section");
    const auto* recipe = section->get("recipe");
    if (!recipe || recipe->empty()) throw PlanError(name, "section has no recipe");
    out.parts.push_back({name, *recipe, *section});
  }
  return out;
}

}  // namespace slapforge::profile
