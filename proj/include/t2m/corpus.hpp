#pragma once

// Scene and painting catalogs, their pairing into Metaverse records, and the
// templated description generator.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "t2m/common.hpp"
#include "t2m/sentences.hpp"

namespace t2m {

struct FurnitureGroup {
  int count = 1;
  std::string category;
  std::string style;
  std::string theme;
  std::string material;
  std::array<double, 3> position{0.0, 0.0, 0.0};  // centroid, meters
};

struct SceneRecord {
  std::string scene_id;
  std::vector<FurnitureGroup> furniture;
};

struct PaintingRecord {
  std::string painting_id;
  std::string name;
  std::string author;
  std::string blurb;
};

enum class Split { kUnset, kTrain, kVal, kTest };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnset: break;
  }
  return "unset";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  if (s == "unset") return Split::kUnset;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

struct MetaverseRecord {
  std::string metaverse_id;
  std::string scene_id;
  std::string painting_id;
  std::string description;
  Split split = Split::kUnset;
};

struct DistanceStats {
  double mean = 0.0;
  double std = 0.0;
};

struct CorpusOptions {
  // Maximum positional sentences per scene, taken in pair-listing order.
  // nullopt keeps every pair.
  std::optional<std::size_t> pair_cap = 30;
};

inline std::string make_metaverse_id(std::string_view scene_id, std::string_view painting_id) {
  std::string id;
  id.reserve(scene_id.size() + painting_id.size() + 2);
  id.append(scene_id).append("__").append(painting_id);
  return id;
}

// ---------------------------------------------------------------------------
// Validation

inline void validate(const FurnitureGroup& g, const std::string& context) {
  if (g.count < 1) throw InvalidArgument(context + ": furniture count must be >= 1");
  if (g.category.empty()) throw InvalidArgument(context + ": furniture category is empty");
  for (double p : g.position)
    if (!std::isfinite(p)) throw InvalidArgument(context + ": non-finite position");
}

inline void validate(const SceneRecord& s) {
  if (s.scene_id.empty()) throw InvalidArgument("scene with empty scene_id");
  if (s.furniture.empty()) throw InvalidArgument("scene '" + s.scene_id + "' has no furniture groups");
  for (std::size_t i = 0; i < s.furniture.size(); ++i)
    validate(s.furniture[i], "scene '" + s.scene_id + "' group " + std::to_string(i));
}

inline void validate(const PaintingRecord& p) {
  const std::string who = "painting '" + p.painting_id + "'";
  if (p.painting_id.empty()) throw InvalidArgument("painting with empty painting_id");
  if (p.name.empty()) throw InvalidArgument(who + ": empty name");
  if (p.author.empty()) throw InvalidArgument(who + ": empty author");
  const auto blurb = trim(p.blurb);
  if (blurb.empty()) throw InvalidArgument(who + ": empty blurb");
  if (blurb.front() == '.') throw InvalidArgument(who + ": blurb starts with a period");
  if (std::isupper(static_cast<unsigned char>(blurb.front())))
    throw InvalidArgument(who + ": blurb must continue \"which ...\" and start lowercase");
}

// ---------------------------------------------------------------------------
// JSON mapping

inline void to_json(nlohmann::ordered_json& j, const FurnitureGroup& g) {
  j = nlohmann::ordered_json{{"count", g.count},       {"category", g.category},
                             {"style", g.style},       {"theme", g.theme},
                             {"material", g.material}, {"position", g.position}};
}

inline void from_json(const nlohmann::json& j, FurnitureGroup& g) {
  j.at("count").get_to(g.count);
  j.at("category").get_to(g.category);
  j.at("style").get_to(g.style);
  j.at("theme").get_to(g.theme);
  j.at("material").get_to(g.material);
  const auto& pos = j.at("position");
  if (!pos.is_array() || pos.size() != 3) throw ParseError("position must be a 3-element array");
  for (std::size_t i = 0; i < 3; ++i) g.position[i] = pos[i].get<double>();
}

inline void to_json(nlohmann::ordered_json& j, const SceneRecord& s) {
  j = nlohmann::ordered_json{{"scene_id", s.scene_id}, {"furniture", s.furniture}};
}

inline void from_json(const nlohmann::json& j, SceneRecord& s) {
  j.at("scene_id").get_to(s.scene_id);
  s.furniture.clear();
  for (const auto& g : j.at("furniture")) s.furniture.push_back(g.get<FurnitureGroup>());
}

inline void to_json(nlohmann::ordered_json& j, const PaintingRecord& p) {
  j = nlohmann::ordered_json{
      {"painting_id", p.painting_id}, {"name", p.name}, {"author", p.author}, {"blurb", p.blurb}};
}

inline void from_json(const nlohmann::json& j, PaintingRecord& p) {
  j.at("painting_id").get_to(p.painting_id);
  j.at("name").get_to(p.name);
  j.at("author").get_to(p.author);
  j.at("blurb").get_to(p.blurb);
}

// Field order of a corpus line: metaverse_id, scene_id, painting_id,
// description, split.
inline void to_json(nlohmann::ordered_json& j, const MetaverseRecord& m) {
  j = nlohmann::ordered_json{{"metaverse_id", m.metaverse_id},
                             {"scene_id", m.scene_id},
                             {"painting_id", m.painting_id},
                             {"description", m.description},
                             {"split", to_string(m.split)}};
}

inline void from_json(const nlohmann::json& j, MetaverseRecord& m) {
  j.at("metaverse_id").get_to(m.metaverse_id);
  j.at("scene_id").get_to(m.scene_id);
  j.at("painting_id").get_to(m.painting_id);
  j.at("description").get_to(m.description);
  m.split = parse_split(j.at("split").get<std::string>());
}

namespace detail {

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

// Reads a JSON-lines stream, skipping blank lines; `parse` receives the json
// value and a context string for error messages.
template <typename F>
void for_each_json_line(std::istream& in, const std::string& source, F&& parse) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string ctx = source + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ctx + ": " + e.what());
    }
    try {
      parse(j, ctx);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ctx + ": " + e.what());
    }
  }
}

}  // namespace detail

inline std::vector<SceneRecord> parse_scene_catalog(std::istream& in, const std::string& source = "<stream>") {
  std::vector<SceneRecord> scenes;
  std::unordered_set<std::string> seen;
  detail::for_each_json_line(in, source, [&](const nlohmann::json& j, const std::string& ctx) {
    auto scene = j.get<SceneRecord>();
    try {
      validate(scene);
    } catch (const InvalidArgument& e) {
      throw ParseError(ctx + ": " + e.what());
    }
    if (!seen.insert(scene.scene_id).second)
      throw DuplicateIdError(ctx + ": duplicate scene_id '" + scene.scene_id + "'");
    scenes.push_back(std::move(scene));
  });
  return scenes;
}

inline std::vector<SceneRecord> load_scene_catalog(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_scene_catalog(in, path);
}

inline void write_scene_catalog(const std::string& path, const std::vector<SceneRecord>& scenes) {
  auto out = detail::open_output(path);
  for (const auto& s : scenes) out << nlohmann::ordered_json(s).dump() << '\n';
}

inline std::vector<PaintingRecord> parse_painting_catalog(std::istream& in, const std::string& source = "<stream>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": " + e.what());
  }
  if (!j.is_array()) throw ParseError(source + ": painting catalog must be a JSON array");
  std::vector<PaintingRecord> out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string ctx = source + "[" + std::to_string(i) + "]";
    PaintingRecord p;
    try {
      p = j[i].get<PaintingRecord>();
      validate(p);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ctx + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw ParseError(ctx + ": " + e.what());
    }
    if (!seen.insert(p.painting_id).second)
      throw DuplicateIdError(ctx + ": duplicate painting_id '" + p.painting_id + "'");
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<PaintingRecord> load_painting_catalog(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_painting_catalog(in, path);
}

inline std::vector<MetaverseRecord> parse_corpus(std::istream& in, const std::string& source = "<stream>") {
  std::vector<MetaverseRecord> out;
  std::unordered_set<std::string> seen;
  detail::for_each_json_line(in, source, [&](const nlohmann::json& j, const std::string& ctx) {
    auto m = j.get<MetaverseRecord>();
    if (!seen.insert(m.metaverse_id).second)
      throw DuplicateIdError(ctx + ": duplicate metaverse_id '" + m.metaverse_id + "'");
    out.push_back(std::move(m));
  });
  return out;
}

inline std::vector<MetaverseRecord> load_corpus(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_corpus(in, path);
}

inline void write_corpus(std::ostream& out, const std::vector<MetaverseRecord>& records) {
  for (const auto& r : records) out << nlohmann::ordered_json(r).dump() << '\n';
}

inline void write_corpus(const std::string& path, const std::vector<MetaverseRecord>& records) {
  auto out = detail::open_output(path);
  write_corpus(out, records);
}

inline std::vector<MetaverseRecord> filter_split(const std::vector<MetaverseRecord>& records, Split split) {
  std::vector<MetaverseRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Pairing and descriptions

inline std::vector<MetaverseRecord> pair_scenes_with_paintings(const std::vector<SceneRecord>& scenes,
                                                               const std::vector<PaintingRecord>& paintings) {
  if (scenes.empty()) throw EmptyInputError("pair_scenes_with_paintings: no scenes");
  if (paintings.empty()) throw EmptyInputError("pair_scenes_with_paintings: no paintings");
  std::vector<MetaverseRecord> out;
  out.reserve(scenes.size() * paintings.size());
  std::unordered_set<std::string> ids;
  for (const auto& s : scenes) {
    for (const auto& p : paintings) {
      MetaverseRecord m;
      m.metaverse_id = make_metaverse_id(s.scene_id, p.painting_id);
      m.scene_id = s.scene_id;
      m.painting_id = p.painting_id;
      if (!ids.insert(m.metaverse_id).second)
        throw DuplicateIdError("metaverse_id collision '" + m.metaverse_id + "'");
      out.push_back(std::move(m));
    }
  }
  return out;
}

inline double group_distance(const FurnitureGroup& a, const FurnitureGroup& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double d = a.position[i] - b.position[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

// Population mean and standard deviation of centroid distances over every
// unordered group pair of every scene.
inline DistanceStats compute_distance_stats(const std::vector<SceneRecord>& scenes) {
  std::size_t n = 0;
  double mean = 0.0, m2 = 0.0;  // Welford
  for (const auto& s : scenes) {
    const auto& f = s.furniture;
    for (std::size_t i = 0; i < f.size(); ++i) {
      for (std::size_t j = i + 1; j < f.size(); ++j) {
        const double d = group_distance(f[i], f[j]);
        ++n;
        const double delta = d - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (d - mean);
      }
    }
  }
  if (n == 0) throw EmptyInputError("compute_distance_stats: no scene has two or more furniture groups");
  return {mean, std::sqrt(std::max(0.0, m2 / static_cast<double>(n)))};
}

inline std::string_view distance_word(double d, const DistanceStats& stats) {
  if (d < stats.mean - stats.std) return "so close";
  if (d < stats.mean) return "close";
  if (d < stats.mean + stats.std) return "far";
  return "so far";
}

namespace detail {

// "<N> <Category> with <Style> style, <Theme> theme, and <Material>"
inline void append_group_phrase(std::string& out, const FurnitureGroup& g) {
  out += std::to_string(g.count);
  out += ' ';
  out += g.category;
  out += " with ";
  out += g.style;
  out += " style, ";
  out += g.theme;
  out += " theme, and ";
  out += g.material;
}

}  // namespace detail

inline std::string furniture_sentence(const FurnitureGroup& g, bool first) {
  std::string s = first ? "This room contains " : "Additionally, it also contains ";
  detail::append_group_phrase(s, g);
  s += '.';
  return s;
}

inline std::string positional_sentence(const FurnitureGroup& a, const FurnitureGroup& b, std::string_view word) {
  std::string s = "The ";
  detail::append_group_phrase(s, a);
  s += " is ";
  s += word;
  s += " from ";
  detail::append_group_phrase(s, b);
  s += '.';
  return s;
}

inline std::string describe_scene(const SceneRecord& scene, const DistanceStats& stats,
                                  const CorpusOptions& opts = {}) {
  if (scene.furniture.empty())
    throw InvalidArgument("describe_scene: scene '" + scene.scene_id + "' has no furniture");
  const auto& f = scene.furniture;
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (i) out += ' ';
    out += furniture_sentence(f[i], i == 0);
  }
  std::size_t emitted = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (std::size_t j = i + 1; j < f.size(); ++j) {
      if (opts.pair_cap && emitted >= *opts.pair_cap) return out;
      out += ' ';
      out += positional_sentence(f[i], f[j], distance_word(group_distance(f[i], f[j]), stats));
      ++emitted;
    }
  }
  return out;
}

inline std::string describe_painting(const PaintingRecord& p) {
  std::string_view blurb = trim(p.blurb);
  while (!blurb.empty() && blurb.back() == '.') blurb = trim(blurb.substr(0, blurb.size() - 1));
  std::string s = "Also, in this room there is a painting called ";
  s += p.name;
  s += " by ";
  s += p.author;
  s += ", which ";
  s += blurb;
  s += '.';
  return s;
}

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

// Cuts at floor(70%) and floor(85%) of the scene count.
inline SplitCounts split_counts(std::size_t scenes) {
  const std::size_t cut1 = scenes * 70 / 100;
  const std::size_t cut2 = scenes * 85 / 100;
  return {cut1, cut2 - cut1, scenes - cut2};
}

inline std::unordered_map<std::string, Split> assign_scene_splits(const std::vector<SceneRecord>& scenes,
                                                                  std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(scenes.size());
  for (const auto& s : scenes) ids.push_back(s.scene_id);
  Rng rng(derive_seed(seed, "scene-split"));
  rng.shuffle(ids.begin(), ids.end());
  const auto counts = split_counts(ids.size());
  std::unordered_map<std::string, Split> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Split s = i < counts.train ? Split::kTrain : i < counts.train + counts.val ? Split::kVal : Split::kTest;
    out.emplace(ids[i], s);
  }
  return out;
}

inline std::vector<MetaverseRecord> build_corpus(const std::vector<SceneRecord>& scenes,
                                                 const std::vector<PaintingRecord>& paintings, std::uint64_t seed,
                                                 const CorpusOptions& opts = {}) {
  for (const auto& s : scenes) validate(s);
  for (const auto& p : paintings) validate(p);
  auto records = pair_scenes_with_paintings(scenes, paintings);
  const auto stats = compute_distance_stats(scenes);
  const auto splits = assign_scene_splits(scenes, seed);

  std::unordered_map<std::string, std::string> painting_text;
  for (const auto& p : paintings) painting_text.emplace(p.painting_id, describe_painting(p));

  std::size_t k = 0;
  for (const auto& s : scenes) {
    const auto scene_text = describe_scene(s, stats, opts);
    for (std::size_t p = 0; p < paintings.size(); ++p, ++k) {
      auto& r = records[k];
      r.description = scene_text + " " + painting_text.at(r.painting_id);
      r.split = splits.at(s.scene_id);
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Summary statistics

struct CountSummary {
  std::size_t min = 0;
  double mean = 0.0;
  std::size_t max = 0;
};

struct CorpusSummary {
  std::size_t records = 0;
  CountSummary tokens;
  CountSummary sentences;
};

inline CorpusSummary corpus_stats(const std::vector<MetaverseRecord>& records) {
  CorpusSummary out;
  out.records = records.size();
  if (records.empty()) return out;
  auto update = [](CountSummary& c, std::size_t v, bool first) {
    c.min = first ? v : std::min(c.min, v);
    c.max = first ? v : std::max(c.max, v);
    c.mean += static_cast<double>(v);
  };
  for (std::size_t i = 0; i < records.size(); ++i) {
    update(out.tokens, split_tokens(records[i].description).size(), i == 0);
    update(out.sentences, split_sentences(records[i].description).size(), i == 0);
  }
  out.tokens.mean /= static_cast<double>(records.size());
  out.sentences.mean /= static_cast<double>(records.size());
  return out;
}

inline nlohmann::ordered_json to_json(const CorpusSummary& s) {
  auto count = [](const CountSummary& c) {
    return nlohmann::ordered_json{{"min", c.min}, {"mean", c.mean}, {"max", c.max}};
  };
  return {{"records", s.records}, {"tokens", count(s.tokens)}, {"sentences", count(s.sentences)}};
}

// ---------------------------------------------------------------------------
// Desk-scale stand-in for the tag exports of a professionally designed indoor
// scene dataset. Tag vocabularies follow that dataset's furniture metadata.

struct SyntheticSceneOptions {
  std::size_t min_groups = 3;
  std::size_t max_groups = 9;
  std::array<double, 3> room_extent{6.0, 2.6, 6.0};
};

inline std::vector<SceneRecord> synthetic_scene_catalog(std::size_t count, std::uint64_t seed,
                                                        const SyntheticSceneOptions& opts = {}) {
  static const std::vector<std::string> categories = {
      "Wardrobe",        "Bed",          "King-size Bed",   "Nightstand",    "Pendant Lamp",
      "Ceiling Lamp",    "Dining Chair", "Dining Table",    "Coffee Table",  "Three-seat Sofa",
      "Armchair",        "TV Stand",     "Bookcase",        "Desk",          "Dressing Table",
      "Children Cabinet", "Shelf",       "Corner Table",    "Lounge Chair",  "Stool",
      "Footstool",       "Wine Cabinet", "Sideboard",       "Floor Lamp",    "Wall Lamp"};
  static const std::vector<std::string> styles = {
      "Modern",      "Chinoiserie",   "Nordic",       "Industrial",      "Japanese",
      "Light Luxury", "Southeast Asia", "Mediterranean", "American Country", "Vintage",
      "Neoclassical", "Korean",       "Ming Qing",    "Minimalist",      "Contemporary Classic"};
  static const std::vector<std::string> themes = {
      "Wrought Iron", "Texture Mark", "Smooth Net", "Lines",  "Cartoon",    "Floral",
      "Striped",      "Gold Foil",    "Cluster",    "Mosaic", "Solid Wood", "Geometric"};
  static const std::vector<std::string> materials = {
      "Marble", "Cloth",   "Leather", "Wood",    "Metal",  "Glass",   "Rough Cloth",
      "Stone",  "Suede",   "Plastic", "Rattan",  "Ceramic", "Smooth Leather"};
  static const std::array<int, 8> counts = {1, 1, 1, 1, 2, 2, 3, 4};

  if (opts.min_groups < 1 || opts.max_groups < opts.min_groups)
    throw InvalidArgument("synthetic_scene_catalog: invalid group range");
  Rng rng(derive_seed(seed, "synthetic-scenes"));
  auto pick = [&rng](const std::vector<std::string>& v) -> const std::string& { return v[rng.below(v.size())]; };

  std::vector<SceneRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneRecord s;
    std::ostringstream id;
    id << "scene" << std::setw(5) << std::setfill('0') << i;
    s.scene_id = id.str();
    const auto groups = opts.min_groups + rng.below(opts.max_groups - opts.min_groups + 1);
    for (std::size_t g = 0; g < groups; ++g) {
      FurnitureGroup f;
      f.count = counts[rng.below(counts.size())];
      f.category = pick(categories);
      f.style = pick(styles);
      f.theme = pick(themes);
      f.material = pick(materials);
      for (std::size_t a = 0; a < 3; ++a) f.position[a] = rng.uniform(0.0, opts.room_extent[a]);
      s.furniture.push_back(std::move(f));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Stand-in painting catalog for tests that need an arbitrary number of
// paintings; the shipped data/paintings.json is the default for real use.
inline std::vector<PaintingRecord> synthetic_painting_catalog(std::size_t count) {
  std::vector<PaintingRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto n = std::to_string(i);
    out.push_back({"painting" + n, "Study " + n, "Anonymous Painter " + n,
                   "shows a quiet interior in muted tones. Light falls across the scene from a single window"});
  }
  return out;
}

}  // namespace t2m
