#include "couple/value_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace couple::values {

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

const char* to_string(Relation relation) {
  switch (relation) {
    case Relation::congruent: return "congruent";
    case Relation::opposite: return "opposite";
    case Relation::irrelevant: return "irrelevant";
  }
  return "irrelevant";
}

Relation relation_from_string(std::string_view text) {
  const std::string t = lower(text);
  if (t == "congruent") return Relation::congruent;
  if (t == "opposite") return Relation::opposite;
  if (t == "irrelevant") return Relation::irrelevant;
  throw Error(ErrorKind::Config, "unknown relation '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// RelationalGraph

std::pair<std::string, std::string> RelationalGraph::key(const std::string& a, const std::string& b) {
  return a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
}

void RelationalGraph::set(const std::string& a, const std::string& b, Relation relation) {
  if (a == b && relation != Relation::congruent) {
    throw Error(ErrorKind::Invariant, "reflexive relation for '" + a + "' must be congruent");
  }
  entries_[key(a, b)] = relation;
}

Relation RelationalGraph::get(const std::string& a, const std::string& b) const {
  auto it = entries_.find(key(a, b));
  if (it == entries_.end()) {
    throw Error(ErrorKind::Invariant, "no relation entry for (" + a + ", " + b + ")");
  }
  return it->second;
}

bool RelationalGraph::has(const std::string& a, const std::string& b) const {
  return entries_.count(key(a, b)) > 0;
}

// ---------------------------------------------------------------------------
// ValueSystem

ValueSystem::ValueSystem(std::string name, std::vector<Dimension> dimensions, int scale_min,
                         int scale_max, RelationalGraph relations)
    : name_(std::move(name)),
      dimensions_(std::move(dimensions)),
      scale_min_(scale_min),
      scale_max_(scale_max),
      relations_(std::move(relations)) {
  if (dimensions_.size() < 2) {
    throw Error(ErrorKind::Invariant, "value system needs at least 2 dimensions");
  }
  if (scale_min_ >= scale_max_) {
    throw Error(ErrorKind::Invariant, "scale_min must be below scale_max");
  }
  for (std::size_t i = 0; i < dimensions_.size(); ++i) {
    const std::string& dim = dimensions_[i].name;
    if (dim.empty()) throw Error(ErrorKind::Invariant, "empty dimension name");
    if (!index_.emplace(lower(dim), i).second) {
      throw Error(ErrorKind::Invariant, "duplicate dimension '" + dim + "'");
    }
    dimension_names_.push_back(dim);
    if (!dimensions_[i].meta_type.empty()) has_meta_types_ = true;
  }
  // Complete the graph: reflexive congruent, unspecified pairs irrelevant.
  for (std::size_t i = 0; i < dimension_names_.size(); ++i) {
    relations_.set(dimension_names_[i], dimension_names_[i], Relation::congruent);
    for (std::size_t j = i + 1; j < dimension_names_.size(); ++j) {
      if (!relations_.has(dimension_names_[i], dimension_names_[j])) {
        relations_.set(dimension_names_[i], dimension_names_[j], Relation::irrelevant);
      }
    }
  }
}

bool ValueSystem::has(std::string_view dimension) const { return find(dimension) != nullptr; }

const std::string* ValueSystem::find(std::string_view dimension) const {
  auto it = index_.find(lower(dimension));
  if (it == index_.end()) return nullptr;
  return &dimension_names_[it->second];
}

const std::string& ValueSystem::canonical(std::string_view dimension) const {
  const std::string* found = find(dimension);
  if (!found) {
    throw Error(ErrorKind::Invariant,
                "unknown dimension '" + std::string(dimension) + "' in system '" + name_ + "'");
  }
  return *found;
}

const std::string& ValueSystem::description(const std::string& dimension) const {
  return dimensions_[index_.at(lower(canonical(dimension)))].description;
}

const std::string& ValueSystem::meta_type(const std::string& dimension) const {
  return dimensions_[index_.at(lower(canonical(dimension)))].meta_type;
}

Relation ValueSystem::relation(const std::string& a, const std::string& b) const {
  return relations_.get(canonical(a), canonical(b));
}

std::string ValueSystem::background_text() const {
  std::ostringstream out;
  out << "The value system '" << name_ << "' has " << dimensions_.size()
      << " value dimensions:\n";
  for (const Dimension& dim : dimensions_) {
    out << "- " << dim.name;
    if (!dim.description.empty()) out << ": " << dim.description;
    out << "\n";
  }
  return out.str();
}

namespace {

struct BuiltinDim {
  const char* name;
  const char* meta;
  const char* description;
};

// Ten basic human values in circular order; neighbours on this ring are
// motivationally compatible.
constexpr BuiltinDim kSchwartzDims[] = {
    {"Self-direction", "Openness to Change",
     "Independent thought, freedom of choice, creativity, and exploration."},
    {"Stimulation", "Openness to Change",
     "Desire for novelty, excitement, and challenging experiences."},
    {"Hedonism", "Openness to Change",
     "Seeking pleasure, sensory gratification, and enjoyment in life."},
    {"Achievement", "Self-Enhancement",
     "Personal success demonstrated through competence according to social standards."},
    {"Power", "Self-Enhancement",
     "Pursuit of social status, control over resources, and dominance over others."},
    {"Security", "Conservation",
     "Pursuit of safety, harmony, and societal or personal stability."},
    {"Conformity", "Conservation",
     "Restraint of actions that may upset or harm others or violate social norms."},
    {"Tradition", "Conservation",
     "Respect and acceptance of cultural or religious customs."},
    {"Benevolence", "Self-Transcendence",
     "Commitment to the welfare of close others, emphasizing care and loyalty."},
    {"Universalism", "Self-Transcendence",
     "Understanding, tolerance, and protection for all people and nature."},
};

bool diametric(const std::string& meta_a, const std::string& meta_b) {
  auto pair_is = [&](const char* x, const char* y) {
    return (meta_a == x && meta_b == y) || (meta_a == y && meta_b == x);
  };
  return pair_is("Openness to Change", "Conservation") ||
         pair_is("Self-Enhancement", "Self-Transcendence");
}

RelationalGraph make_schwartz_relations(const std::vector<Dimension>& dims) {
  RelationalGraph graph;
  const std::size_t n = dims.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      Relation rel;
      const bool adjacent = (j - i == 1) || (i == 0 && j == n - 1);
      if (dims[i].meta_type == dims[j].meta_type) {
        rel = Relation::congruent;
      } else if (diametric(dims[i].meta_type, dims[j].meta_type)) {
        rel = Relation::opposite;
      } else if (adjacent) {
        rel = Relation::congruent;
      } else {
        rel = Relation::irrelevant;
      }
      graph.set(dims[i].name, dims[j].name, rel);
    }
  }
  return graph;
}

}  // namespace

std::shared_ptr<const ValueSystem> ValueSystem::schwartz10() {
  static const std::shared_ptr<const ValueSystem> instance = [] {
    std::vector<Dimension> dims;
    for (const BuiltinDim& d : kSchwartzDims) {
      dims.push_back(Dimension{d.name, d.description, d.meta});
    }
    RelationalGraph graph = make_schwartz_relations(dims);
    return std::make_shared<const ValueSystem>("schwartz10", std::move(dims), 1, 5,
                                               std::move(graph));
  }();
  return instance;
}

std::shared_ptr<const ValueSystem> ValueSystem::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::Config, "value-system document must be an object");
  if (!doc.contains("name") || !doc.contains("dimensions")) {
    throw Error(ErrorKind::Config, "value-system document needs 'name' and 'dimensions'");
  }
  std::vector<Dimension> dims;
  for (const auto& entry : doc.at("dimensions")) {
    Dimension dim;
    if (entry.is_string()) {
      dim.name = entry.get<std::string>();
    } else {
      dim.name = entry.at("name").get<std::string>();
      dim.description = entry.value("description", "");
      dim.meta_type = entry.value("meta_type", "");
    }
    dims.push_back(std::move(dim));
  }
  if (doc.contains("meta_types")) {
    for (auto& dim : dims) {
      auto it = doc.at("meta_types").find(dim.name);
      if (it != doc.at("meta_types").end()) dim.meta_type = it->get<std::string>();
    }
  }
  std::map<std::string, std::string> canonical;
  for (const auto& dim : dims) canonical[lower(dim.name)] = dim.name;
  auto resolve_dim = [&](const std::string& raw) -> const std::string& {
    auto it = canonical.find(lower(raw));
    if (it == canonical.end()) {
      throw Error(ErrorKind::Config, "relation references unknown dimension '" + raw + "'");
    }
    return it->second;
  };
  RelationalGraph graph;
  if (doc.contains("relations")) {
    for (const auto& entry : doc.at("relations")) {
      graph.set(resolve_dim(entry.at("a").get<std::string>()),
                resolve_dim(entry.at("b").get<std::string>()),
                relation_from_string(entry.at("relation").get<std::string>()));
    }
  } else {
    // No explicit graph: dimensions sharing a meta-type are congruent,
    // everything else irrelevant.
    for (std::size_t i = 0; i < dims.size(); ++i) {
      for (std::size_t j = i + 1; j < dims.size(); ++j) {
        if (!dims[i].meta_type.empty() && dims[i].meta_type == dims[j].meta_type) {
          graph.set(dims[i].name, dims[j].name, Relation::congruent);
        }
      }
    }
  }
  const int scale_min = doc.value("scale_min", 1);
  const int scale_max = doc.value("scale_max", 5);
  return std::make_shared<const ValueSystem>(doc.at("name").get<std::string>(), std::move(dims),
                                             scale_min, scale_max, std::move(graph));
}

std::shared_ptr<const ValueSystem> ValueSystem::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open value-system file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "invalid JSON in '" + path + "': " + e.what());
  }
  return from_json(doc);
}

std::shared_ptr<const ValueSystem> ValueSystem::resolve(const std::string& name_or_path) {
  if (name_or_path == "schwartz10") return schwartz10();
  return from_file(name_or_path);
}

// ---------------------------------------------------------------------------
// ValueProfile

ValueProfile::ValueProfile(std::shared_ptr<const ValueSystem> system,
                           const std::map<std::string, int>& scores)
    : system_(std::move(system)) {
  if (!system_) throw Error(ErrorKind::Invariant, "profile needs a value system");
  for (const auto& [dim, score] : scores) {
    const std::string& canonical = system_->canonical(dim);
    if (score < system_->scale_min() || score > system_->scale_max()) {
      throw Error(ErrorKind::Invariant, "score " + std::to_string(score) + " for '" + canonical +
                                            "' outside [" + std::to_string(system_->scale_min()) +
                                            ", " + std::to_string(system_->scale_max()) + "]");
    }
    if (!scores_.emplace(canonical, score).second) {
      throw Error(ErrorKind::Invariant, "dimension '" + canonical + "' scored twice");
    }
  }
}

int ValueProfile::score(const std::string& dimension) const {
  auto it = scores_.find(dimension);
  if (it == scores_.end() && system_) {
    const std::string* canonical = system_->find(dimension);
    if (canonical) it = scores_.find(*canonical);
  }
  if (it == scores_.end()) {
    throw Error(ErrorKind::DimensionMismatch, "profile has no score for '" + dimension + "'");
  }
  return it->second;
}

bool ValueProfile::same_dimensions(const ValueProfile& other) const {
  if (scores_.size() != other.scores_.size()) return false;
  for (const auto& [dim, _] : scores_) {
    if (!other.has(dim)) return false;
  }
  return true;
}

ValueProfile ValueProfile::restricted_to(std::span<const std::string> dimensions) const {
  std::map<std::string, int> subset;
  for (const std::string& dim : dimensions) {
    const std::string& canonical = system_->canonical(dim);
    auto it = scores_.find(canonical);
    if (it != scores_.end()) subset[canonical] = it->second;
  }
  return ValueProfile(system_, subset);
}

bool ValueProfile::operator==(const ValueProfile& other) const {
  const std::string lhs = system_ ? system_->name() : "";
  const std::string rhs = other.system_ ? other.system_->name() : "";
  return lhs == rhs && scores_ == other.scores_;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

void require_same_dimensions(const ValueProfile& a, const ValueProfile& b) {
  if (!a.same_dimensions(b)) {
    throw Error(ErrorKind::DimensionMismatch, "profiles score different dimension sets");
  }
}

/// Average ranks with rank 1 for the highest score.
std::vector<double> average_ranks(const std::vector<int>& scores) {
  const std::size_t n = scores.size();
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t greater = 0;
    std::size_t equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (scores[j] > scores[i]) ++greater;
      if (scores[j] == scores[i]) ++equal;
    }
    ranks[i] = static_cast<double>(greater) + (static_cast<double>(equal) + 1.0) / 2.0;
  }
  return ranks;
}

}  // namespace

double mae(const ValueProfile& target, const ValueProfile& observed) {
  require_same_dimensions(target, observed);
  if (target.empty()) throw Error(ErrorKind::Precondition, "mae over empty profiles");
  double sum = 0.0;
  for (const auto& [dim, score] : target.scores()) {
    sum += std::abs(score - observed.score(dim));
  }
  return sum / static_cast<double>(target.size());
}

double spearman(const ValueProfile& target, const ValueProfile& observed) {
  require_same_dimensions(target, observed);
  const std::size_t d = target.size();
  if (d < 2) throw Error(ErrorKind::Precondition, "spearman needs at least 2 dimensions");

  std::vector<int> a, b;
  a.reserve(d);
  b.reserve(d);
  for (const auto& [dim, score] : target.scores()) {
    a.push_back(score);
    b.push_back(observed.score(dim));
  }
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);

  if (std::all_of(a.begin(), a.end(), [&](int s) { return s == a.front(); }) ||
      std::all_of(b.begin(), b.end(), [&](int s) { return s == b.front(); })) {
    throw Error(ErrorKind::UndefinedCorrelation, "constant profile has no rank ordering");
  }

  // Exact endpoints for identical and fully reversed orderings.
  bool identical = true;
  bool reversed = true;
  for (std::size_t i = 0; i < d; ++i) {
    if (ra[i] != rb[i]) identical = false;
    if (ra[i] + rb[i] != static_cast<double>(d) + 1.0) reversed = false;
  }
  if (identical) return 1.0;
  if (reversed) return -1.0;

  const double mean = (static_cast<double>(d) + 1.0) / 2.0;
  double num = 0.0, den_a = 0.0, den_b = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    num += da * db;
    den_a += da * da;
    den_b += db * db;
  }
  const double rho = num / (std::sqrt(den_a) * std::sqrt(den_b));
  return std::clamp(rho, -1.0, 1.0);
}

PriorityPreservation priority_preserved(const ValueProfile& target, const ValueProfile& observed) {
  require_same_dimensions(target, observed);
  std::vector<std::pair<std::string, int>> entries(target.scores().begin(), target.scores().end());
  std::size_t strict = 0;
  std::size_t preserved = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = 0; j < entries.size(); ++j) {
      if (i == j || entries[i].second <= entries[j].second) continue;
      ++strict;
      if (observed.score(entries[i].first) > observed.score(entries[j].first)) ++preserved;
    }
  }
  PriorityPreservation result;
  result.all_preserved = (preserved == strict);
  result.preserved_fraction =
      strict == 0 ? 1.0 : static_cast<double>(preserved) / static_cast<double>(strict);
  return result;
}

int deviation(const ValueProfile& attributed, const ValueProfile& target) {
  require_same_dimensions(attributed, target);
  int sum = 0;
  for (const auto& [dim, score] : attributed.scores()) {
    sum += std::abs(score - target.score(dim));
  }
  return sum;
}

// ---------------------------------------------------------------------------
// PriorityMatrix

PriorityMatrix::PriorityMatrix(const ValueProfile& profile) {
  if (profile.empty()) throw Error(ErrorKind::Precondition, "priority matrix of empty profile");
  for (const auto& [dim, score] : profile.scores()) {
    dimensions_.push_back(dim);
    scores_[dim] = score;
  }
}

int PriorityMatrix::entry(const std::string& dim_i, const std::string& dim_j) const {
  auto i = scores_.find(dim_i);
  auto j = scores_.find(dim_j);
  if (i == scores_.end() || j == scores_.end()) {
    throw Error(ErrorKind::DimensionMismatch, "matrix has no entry (" + dim_i + ", " + dim_j + ")");
  }
  return i->second - j->second;
}

PriorityMatrix priority_matrix(const ValueProfile& profile) { return PriorityMatrix(profile); }

// ---------------------------------------------------------------------------
// Profile files

ValueProfile profile_from_json(const nlohmann::json& scores,
                               std::shared_ptr<const ValueSystem> system) {
  if (!scores.is_object()) throw Error(ErrorKind::Config, "profile scores must be an object");
  std::map<std::string, int> map;
  for (const auto& [dim, value] : scores.items()) {
    if (value.is_number_integer()) {
      map[dim] = value.get<int>();
    } else if (value.is_number_float()) {
      // Survey-derived priorities arrive as reals; they are floored onto the
      // integer scale.
      map[dim] = static_cast<int>(std::floor(value.get<double>()));
    } else {
      throw Error(ErrorKind::Config, "score for '" + dim + "' must be a number");
    }
  }
  return ValueProfile(std::move(system), map);
}

nlohmann::json profile_to_json(const ValueProfile& profile) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [dim, score] : profile.scores()) out[dim] = score;
  return out;
}

ProfileSet load_profiles(const nlohmann::json& doc, std::shared_ptr<const ValueSystem> system) {
  if (!doc.is_object()) throw Error(ErrorKind::Config, "profile document must be an object");
  if (doc.contains("system")) {
    const std::string declared = doc.at("system").get<std::string>();
    if (declared != system->name()) {
      throw Error(ErrorKind::Config, "profile file declares system '" + declared +
                                         "' but '" + system->name() + "' is configured");
    }
  }
  ProfileSet set;
  set.system = system;
  if (doc.contains("profiles")) {
    for (const auto& [id, scores] : doc.at("profiles").items()) {
      set.profiles.emplace(id, profile_from_json(scores, system));
    }
  } else if (doc.contains("scores")) {
    set.profiles.emplace("default", profile_from_json(doc.at("scores"), system));
  } else {
    throw Error(ErrorKind::Config, "profile document needs 'profiles' or 'scores'");
  }
  if (set.profiles.empty()) throw Error(ErrorKind::Config, "profile document has no profiles");
  return set;
}

ProfileSet load_profiles_file(const std::string& path, std::shared_ptr<const ValueSystem> system) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open profile file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "invalid JSON in '" + path + "': " + e.what());
  }
  return load_profiles(doc, std::move(system));
}

}  // namespace couple::values
