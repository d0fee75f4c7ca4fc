#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "couple/errors.hpp"

namespace couple::values {

enum class Relation { congruent, opposite, irrelevant };

const char* to_string(Relation relation);
Relation relation_from_string(std::string_view text);

/// Symmetric, total map of pairwise relations between the dimensions of one
/// value system. Reflexive entries are always congruent.
class RelationalGraph {
 public:
  RelationalGraph() = default;

  void set(const std::string& a, const std::string& b, Relation relation);
  Relation get(const std::string& a, const std::string& b) const;
  bool has(const std::string& a, const std::string& b) const;
  std::size_t pair_count() const { return entries_.size(); }

 private:
  static std::pair<std::string, std::string> key(const std::string& a, const std::string& b);
  std::map<std::pair<std::string, std::string>, Relation> entries_;
};

struct Dimension {
  std::string name;
  std::string description;  // one-line motivational definition, may be empty
  std::string meta_type;    // higher-order group, may be empty
};

class ValueSystem {
 public:
  ValueSystem(std::string name, std::vector<Dimension> dimensions, int scale_min, int scale_max,
              RelationalGraph relations);

  /// The built-in ten-dimension basic-human-values system with generated
  /// pairwise relations.
  static std::shared_ptr<const ValueSystem> schwartz10();

  static std::shared_ptr<const ValueSystem> from_json(const nlohmann::json& doc);
  static std::shared_ptr<const ValueSystem> from_file(const std::string& path);
  /// Resolves a built-in name ("schwartz10") or a file path.
  static std::shared_ptr<const ValueSystem> resolve(const std::string& name_or_path);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& dimensions() const { return dimension_names_; }
  std::size_t size() const { return dimension_names_.size(); }
  int scale_min() const { return scale_min_; }
  int scale_max() const { return scale_max_; }

  bool has(std::string_view dimension) const;
  /// Case-insensitive lookup returning the canonical spelling.
  const std::string* find(std::string_view dimension) const;
  const std::string& canonical(std::string_view dimension) const;

  const std::string& description(const std::string& dimension) const;
  const std::string& meta_type(const std::string& dimension) const;
  bool has_meta_types() const { return has_meta_types_; }

  Relation relation(const std::string& a, const std::string& b) const;
  const RelationalGraph& relations() const { return relations_; }

  /// Intro block for prompts: one "- Name: description" line per dimension.
  std::string background_text() const;

 private:
  std::string name_;
  std::vector<Dimension> dimensions_;
  std::vector<std::string> dimension_names_;
  std::map<std::string, std::size_t> index_;  // lowercased name -> index
  int scale_min_ = 1;
  int scale_max_ = 5;
  bool has_meta_types_ = false;
  RelationalGraph relations_;
};

/// Integer priority scores over a subset of a system's dimensions.
class ValueProfile {
 public:
  ValueProfile() = default;
  ValueProfile(std::shared_ptr<const ValueSystem> system, const std::map<std::string, int>& scores);

  const std::shared_ptr<const ValueSystem>& system() const { return system_; }
  const std::map<std::string, int>& scores() const { return scores_; }
  int score(const std::string& dimension) const;
  bool has(const std::string& dimension) const { return scores_.count(dimension) > 0; }
  bool empty() const { return scores_.empty(); }
  std::size_t size() const { return scores_.size(); }

  bool same_dimensions(const ValueProfile& other) const;
  ValueProfile restricted_to(std::span<const std::string> dimensions) const;

  bool operator==(const ValueProfile& other) const;

 private:
  std::shared_ptr<const ValueSystem> system_;
  std::map<std::string, int> scores_;  // canonical dimension -> score
};

/// Pairwise signed score differences s_i - s_j of one profile: antisymmetric,
/// zero diagonal.
class PriorityMatrix {
 public:
  explicit PriorityMatrix(const ValueProfile& profile);

  const std::vector<std::string>& dimensions() const { return dimensions_; }
  int entry(const std::string& dim_i, const std::string& dim_j) const;

 private:
  std::vector<std::string> dimensions_;
  std::map<std::string, int> scores_;
};

/// Mean absolute score difference over a shared dimension set.
double mae(const ValueProfile& target, const ValueProfile& observed);

/// Rank correlation of the two profiles' priority orderings. Ties get
/// average ranks; with no ties this equals 1 - 6*sum(d^2)/(d(d^2-1)).
/// Throws UndefinedCorrelation when either profile is constant.
double spearman(const ValueProfile& target, const ValueProfile& observed);

struct PriorityPreservation {
  bool all_preserved = true;
  double preserved_fraction = 1.0;
};

/// Checks every strictly ordered pair of the target against the observed
/// profile. Fraction is preserved / total strict pairs (1.0 when none).
PriorityPreservation priority_preserved(const ValueProfile& target, const ValueProfile& observed);

/// Unnormalized L1 distance sum |s'_i - s_i| between profiles on the same
/// dimension set.
int deviation(const ValueProfile& attributed, const ValueProfile& target);

PriorityMatrix priority_matrix(const ValueProfile& profile);

// ---------------------------------------------------------------------------
// Profile files

struct ProfileSet {
  std::shared_ptr<const ValueSystem> system;
  std::map<std::string, ValueProfile> profiles;
};

/// Loads {"system": name, "profiles": {id: {dim: score}}} or a single
/// {"system": name, "scores": {dim: score}} document.
ProfileSet load_profiles(const nlohmann::json& doc, std::shared_ptr<const ValueSystem> system);
ProfileSet load_profiles_file(const std::string& path, std::shared_ptr<const ValueSystem> system);

nlohmann::json profile_to_json(const ValueProfile& profile);
ValueProfile profile_from_json(const nlohmann::json& scores, std::shared_ptr<const ValueSystem> system);

}  // namespace couple::values
