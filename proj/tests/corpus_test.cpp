#include <gtest/gtest.h>

#include <regex>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace t2m;
using t2m::test::group;

namespace {

SceneRecord two_group_scene() {
  return {"s1",
          {group(1, "Bed", "Modern", "Texture Mark", "Cloth", {0, 0, 0}),
           group(2, "Nightstand", "Nordic", "Smooth Net", "Wood", {1, 0, 0})}};
}

PaintingRecord starry() { return {"p1", "The Starry Night", "Vincent van Gogh", "depicts a swirling night sky"}; }

}  // namespace

TEST(Templates, FurnitureSentenceFirstAndLater) {
  const auto g = group(2, "Dining Chair", "Nordic", "Lines", "Wood");
  EXPECT_EQ(furniture_sentence(g, true), "This room contains 2 Dining Chair with Nordic style, Lines theme, and Wood.");
  EXPECT_EQ(furniture_sentence(g, false),
            "Additionally, it also contains 2 Dining Chair with Nordic style, Lines theme, and Wood.");
}

TEST(Templates, PositionalSentence) {
  const auto s = two_group_scene();
  EXPECT_EQ(positional_sentence(s.furniture[0], s.furniture[1], "so close"),
            "The 1 Bed with Modern style, Texture Mark theme, and Cloth is so close from 2 Nightstand with Nordic "
            "style, Smooth Net theme, and Wood.");
}

TEST(Templates, PaintingSentence) {
  EXPECT_EQ(describe_painting(starry()),
            "Also, in this room there is a painting called The Starry Night by Vincent van Gogh, which depicts a "
            "swirling night sky.");
}

TEST(Templates, PaintingBlurbTrailingPeriodIsNormalized) {
  auto p = starry();
  p.blurb = "depicts a swirling night sky.";
  EXPECT_EQ(describe_painting(p), describe_painting(starry()));
  p.blurb = "depicts a swirling night sky.. ";
  EXPECT_EQ(describe_painting(p), describe_painting(starry()));
}

TEST(Templates, SingleGroupSceneHasOnlyFurnitureSentence) {
  const SceneRecord s{"s", {group(1, "Bed", "Modern", "Lines", "Wood")}};
  EXPECT_EQ(describe_scene(s, {1.0, 0.5}), "This room contains 1 Bed with Modern style, Lines theme, and Wood.");
}

TEST(Templates, TwoGroupDescriptionExact) {
  // Only pair distance is 1, so mean 1 and std 0: the "far" band [1, 1) is
  // empty and d == mean is "so far".
  const std::vector<SceneRecord> scenes{two_group_scene()};
  const auto records = build_corpus(scenes, {starry()}, 0);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].description,
            "This room contains 1 Bed with Modern style, Texture Mark theme, and Cloth. Additionally, it also "
            "contains 2 Nightstand with Nordic style, Smooth Net theme, and Wood. The 1 Bed with Modern style, "
            "Texture Mark theme, and Cloth is so far from 2 Nightstand with Nordic style, Smooth Net theme, and Wood. "
            "Also, in this room there is a painting called The Starry Night by Vincent van Gogh, which depicts a "
            "swirling night sky.");
  EXPECT_EQ(records[0].metaverse_id, "s1__p1");
}

TEST(Templates, ShapeMatchesGrammarForRandomTags) {
  const std::regex furniture(
      R"((This room contains|Additionally, it also contains) \d+ [^.]+ with [^.]+ style, [^.]+ theme, and [^.]+)");
  const std::regex positional(R"(The \d+ [^.]+ is (so close|close|far|so far) from \d+ [^.]+)");
  const std::regex painting(R"(Also, in this room there is a painting called [^.]+ by [^.]+, which .+)");
  const auto records = test::small_corpus(20, 2, 5, {2, 6, {6, 2.6, 6}});
  for (const auto& r : records) {
    const auto sentences = split_sentences(r.description);
    ASSERT_GE(sentences.size(), 4u);
    std::size_t furniture_n = 0, positional_n = 0;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      const auto& s = sentences[i];
      if (std::regex_match(s, furniture)) {
        ++furniture_n;
        EXPECT_EQ(s.rfind("This room contains", 0) == 0, i == 0) << s;
      } else if (std::regex_match(s, positional)) {
        ++positional_n;
      } else if (!std::regex_match(s, painting)) {
        // Painting blurb sentences after the first continue the painting text.
        ASSERT_GT(i, furniture_n + positional_n) << "unexpected sentence: " << s;
      }
    }
    EXPECT_EQ(positional_n, furniture_n * (furniture_n - 1) / 2);
  }
}

TEST(Distances, ThreeCollinearGroups) {
  // Pair distances 1, 2, 1.
  const std::vector<SceneRecord> scenes{{"s",
                                         {group(1, "A", "S", "T", "M", {0, 0, 0}), group(1, "B", "S", "T", "M", {1, 0, 0}),
                                          group(1, "C", "S", "T", "M", {2, 0, 0})}}};
  const auto st = compute_distance_stats(scenes);
  EXPECT_NEAR(st.mean, 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(st.std, std::sqrt(2.0) / 3.0, 1e-12);
}

TEST(Distances, SinglePairHasZeroSpread) {
  const std::vector<SceneRecord> scenes{
      {"s", {group(1, "A", "S", "T", "M", {0, 0, 0}), group(1, "B", "S", "T", "M", {3, 0, 0})}}};
  const auto st = compute_distance_stats(scenes);
  EXPECT_DOUBLE_EQ(st.mean, 3.0);
  EXPECT_DOUBLE_EQ(st.std, 0.0);
}

TEST(Distances, NoPairsIsAnError) {
  const std::vector<SceneRecord> scenes{{"s", {group(1, "A", "S", "T", "M")}}};
  EXPECT_THROW(compute_distance_stats(scenes), EmptyInputError);
}

TEST(Distances, StatsPoolPairsAcrossScenes) {
  // Oracle: explicit list of every pair distance, two-pass population moments.
  const auto scenes = synthetic_scene_catalog(40, 3);
  std::vector<double> d;
  for (const auto& s : scenes)
    for (std::size_t i = 0; i < s.furniture.size(); ++i)
      for (std::size_t j = i + 1; j < s.furniture.size(); ++j) {
        const auto& a = s.furniture[i].position;
        const auto& b = s.furniture[j].position;
        d.push_back(std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]));
      }
  double mean = 0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double var = 0;
  for (double x : d) var += (x - mean) * (x - mean);
  var /= static_cast<double>(d.size());
  const auto st = compute_distance_stats(scenes);
  EXPECT_NEAR(st.mean, mean, 1e-12);
  EXPECT_NEAR(st.std, std::sqrt(var), 1e-12);
}

TEST(Distances, WordBoundaries) {
  const DistanceStats st{2.0, 0.5};
  EXPECT_EQ(distance_word(1.49, st), "so close");
  EXPECT_EQ(distance_word(1.5, st), "close");
  EXPECT_EQ(distance_word(1.99, st), "close");
  EXPECT_EQ(distance_word(2.0, st), "far");
  EXPECT_EQ(distance_word(2.49, st), "far");
  EXPECT_EQ(distance_word(2.5, st), "so far");
  EXPECT_EQ(distance_word(1.0, {4.0 / 3.0, std::sqrt(2.0) / 3.0}), "close");
}

TEST(Distances, WordIsMonotoneInDistance) {
  const std::map<std::string_view, int> order{{"so close", 0}, {"close", 1}, {"far", 2}, {"so far", 3}};
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const DistanceStats st{rng.uniform(0.5, 4.0), rng.uniform(0.0, 1.5)};
    std::vector<double> ds;
    for (int i = 0; i < 30; ++i) ds.push_back(rng.uniform(0.0, 8.0));
    std::sort(ds.begin(), ds.end());
    for (std::size_t i = 1; i < ds.size(); ++i)
      EXPECT_LE(order.at(distance_word(ds[i - 1], st)), order.at(distance_word(ds[i], st)));
  }
}

TEST(Pairing, CrossProductInSceneMajorOrder) {
  const std::vector<SceneRecord> scenes{{"a", {group(1, "A", "S", "T", "M")}}, {"b", {group(1, "A", "S", "T", "M")}}};
  const auto paintings = synthetic_painting_catalog(3);
  const auto recs = pair_scenes_with_paintings(scenes, paintings);
  ASSERT_EQ(recs.size(), 6u);
  EXPECT_EQ(recs[0].metaverse_id, "a__painting0");
  EXPECT_EQ(recs[2].metaverse_id, "a__painting2");
  EXPECT_EQ(recs[3].metaverse_id, "b__painting0");
  EXPECT_EQ(recs[5].scene_id, "b");
  EXPECT_EQ(recs[5].painting_id, "painting2");
}

TEST(Pairing, SingleSceneSinglePainting) {
  const std::vector<SceneRecord> scenes{two_group_scene()};
  EXPECT_EQ(pair_scenes_with_paintings(scenes, {starry()}).size(), 1u);
}

TEST(Pairing, EmptyInputsAreErrors) {
  const std::vector<SceneRecord> scenes{two_group_scene()};
  EXPECT_THROW(pair_scenes_with_paintings({}, {starry()}), EmptyInputError);
  EXPECT_THROW(pair_scenes_with_paintings(scenes, {}), EmptyInputError);
}

TEST(Pairing, DuplicateIdsAreErrors) {
  const std::vector<SceneRecord> scenes{two_group_scene(), two_group_scene()};
  EXPECT_THROW(pair_scenes_with_paintings(scenes, {starry()}), DuplicateIdError);
  const std::vector<SceneRecord> one{two_group_scene()};
  EXPECT_THROW(pair_scenes_with_paintings(one, {starry(), starry()}), DuplicateIdError);
}

TEST(Pairing, FullScaleCount) {
  const auto scenes = synthetic_scene_catalog(3384, 1, {1, 1, {6, 2.6, 6}});
  EXPECT_EQ(pair_scenes_with_paintings(scenes, synthetic_painting_catalog(10)).size(), 33840u);
}

TEST(Catalogs, SceneCatalogParses) {
  std::istringstream in(
      R"({"scene_id":"x","furniture":[{"count":2,"category":"Bed","style":"Modern","theme":"Lines","material":"Wood","position":[1,2,3]}]})"
      "\n\n"
      R"({"scene_id":"y","furniture":[{"count":1,"category":"Desk","style":"Nordic","theme":"Floral","material":"Metal","position":[0,0,0]}]})"
      "\n");
  const auto scenes = parse_scene_catalog(in);
  ASSERT_EQ(scenes.size(), 2u);
  EXPECT_EQ(scenes[0].furniture[0].count, 2);
  EXPECT_DOUBLE_EQ(scenes[0].furniture[0].position[2], 3.0);
  EXPECT_EQ(scenes[1].furniture[0].material, "Metal");
}

TEST(Catalogs, SceneCatalogErrorsNameTheLine) {
  std::istringstream bad("{\"scene_id\":\"x\",\"furniture\":[}\n");
  try {
    parse_scene_catalog(bad, "scenes.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("scenes.jsonl:1"), std::string::npos) << e.what();
  }
  std::istringstream empty_furniture(R"({"scene_id":"x","furniture":[]})");
  EXPECT_THROW(parse_scene_catalog(empty_furniture), ParseError);
  std::istringstream dup(
      R"({"scene_id":"x","furniture":[{"count":1,"category":"A","style":"S","theme":"T","material":"M","position":[0,0,0]}]})"
      "\n"
      R"({"scene_id":"x","furniture":[{"count":1,"category":"A","style":"S","theme":"T","material":"M","position":[0,0,0]}]})");
  EXPECT_THROW(parse_scene_catalog(dup), DuplicateIdError);
}

TEST(Catalogs, PaintingCatalogValidation) {
  std::istringstream ok(R"([{"painting_id":"p","name":"N","author":"A","blurb":"shows a field"}])");
  EXPECT_EQ(parse_painting_catalog(ok).size(), 1u);
  std::istringstream upper(R"([{"painting_id":"p","name":"N","author":"A","blurb":"Shows a field"}])");
  EXPECT_THROW(parse_painting_catalog(upper), ParseError);
  std::istringstream empty(R"([{"painting_id":"p","name":"N","author":"A","blurb":"  "}])");
  EXPECT_THROW(parse_painting_catalog(empty), ParseError);
}

TEST(Catalogs, ShippedPaintingCatalogIsValid) {
  const auto paintings = load_painting_catalog(test::data_path("paintings.json"));
  EXPECT_EQ(paintings.size(), 10u);
  std::set<std::string> ids;
  for (const auto& p : paintings) ids.insert(p.painting_id);
  EXPECT_EQ(ids.size(), 10u);
}

TEST(Catalogs, SceneCatalogRoundTrip) {
  const auto dir = test::temp_dir("scene_rt");
  const auto scenes = synthetic_scene_catalog(25, 4);
  write_scene_catalog((dir / "s.jsonl").string(), scenes);
  const auto back = load_scene_catalog((dir / "s.jsonl").string());
  ASSERT_EQ(back.size(), scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    ASSERT_EQ(back[i].furniture.size(), scenes[i].furniture.size());
    EXPECT_EQ(back[i].furniture[0].position, scenes[i].furniture[0].position);
  }
}

TEST(Splits, CountsFollowFloorCuts) {
  const auto full = split_counts(3384);
  EXPECT_EQ(full.train, 2368u);
  EXPECT_EQ(full.val, 508u);
  EXPECT_EQ(full.test, 508u);
  const auto hundred = split_counts(100);
  EXPECT_EQ(hundred.train, 70u);
  EXPECT_EQ(hundred.val, 15u);
  EXPECT_EQ(hundred.test, 15u);
}

TEST(Splits, AssignmentMatchesCounts) {
  const auto scenes = synthetic_scene_catalog(3384, 2, {1, 1, {6, 2.6, 6}});
  const auto splits = assign_scene_splits(scenes, 9);
  std::map<Split, std::size_t> n;
  for (const auto& [id, s] : splits) ++n[s];
  EXPECT_EQ(n[Split::kTrain], 2368u);
  EXPECT_EQ(n[Split::kVal], 508u);
  EXPECT_EQ(n[Split::kTest], 508u);
}

TEST(Splits, ScenesAreDisjointAndPaintingsInherit) {
  const auto records = test::small_corpus(100, 10, 21);
  std::map<std::string, Split> scene_split;
  std::map<Split, std::size_t> per_split;
  for (const auto& r : records) {
    ASSERT_NE(r.split, Split::kUnset);
    const auto [it, fresh] = scene_split.emplace(r.scene_id, r.split);
    EXPECT_EQ(it->second, r.split) << r.scene_id;
    ++per_split[r.split];
  }
  EXPECT_EQ(per_split[Split::kTrain], 700u);
  EXPECT_EQ(per_split[Split::kVal], 150u);
  EXPECT_EQ(per_split[Split::kTest], 150u);
}

TEST(Splits, FilterSplit) {
  const auto records = test::small_corpus(20, 2, 3);
  const auto val = filter_split(records, Split::kVal);
  EXPECT_EQ(val.size(), 6u);
  for (const auto& r : val) EXPECT_EQ(r.split, Split::kVal);
}

TEST(Corpus, CrossProductIsComplete) {
  const auto scenes = synthetic_scene_catalog(30, 8);
  const auto paintings = synthetic_painting_catalog(7);
  const auto records = build_corpus(scenes, paintings, 8);
  std::set<std::pair<std::string, std::string>> pairs;
  std::set<std::string> ids;
  for (const auto& r : records) {
    pairs.emplace(r.scene_id, r.painting_id);
    ids.insert(r.metaverse_id);
  }
  EXPECT_EQ(records.size(), 210u);
  EXPECT_EQ(pairs.size(), 210u);
  EXPECT_EQ(ids.size(), 210u);
}

TEST(Corpus, SameSeedIsByteIdentical) {
  const auto scenes = synthetic_scene_catalog(50, 12);
  const auto paintings = synthetic_painting_catalog(4);
  std::ostringstream a, b, c;
  write_corpus(a, build_corpus(scenes, paintings, 99));
  write_corpus(b, build_corpus(scenes, paintings, 99));
  write_corpus(c, build_corpus(scenes, paintings, 100));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
}

TEST(Corpus, FieldOrderAndRoundTrip) {
  const auto records = test::small_corpus(5, 2, 1);
  std::ostringstream out;
  write_corpus(out, records);
  const auto first = out.str().substr(0, out.str().find('\n'));
  const auto p_id = first.find("\"metaverse_id\"");
  const auto p_scene = first.find("\"scene_id\"");
  const auto p_paint = first.find("\"painting_id\"");
  const auto p_desc = first.find("\"description\"");
  const auto p_split = first.find("\"split\"");
  EXPECT_LT(p_id, p_scene);
  EXPECT_LT(p_scene, p_paint);
  EXPECT_LT(p_paint, p_desc);
  EXPECT_LT(p_desc, p_split);
  std::istringstream in(out.str());
  const auto back = parse_corpus(in);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].description, records[i].description);
    EXPECT_EQ(back[i].split, records[i].split);
  }
}

TEST(Corpus, PairCapLimitsPositionalSentences) {
  // 10 groups give 45 pairs; default cap keeps 30.
  const auto scenes = synthetic_scene_catalog(3, 5, {10, 10, {6, 2.6, 6}});
  const auto painting = synthetic_painting_catalog(1);
  auto count_positional = [](const std::string& text) {
    std::size_t n = 0;
    for (const auto& s : split_sentences(text))
      if (s.rfind("The ", 0) == 0) ++n;
    return n;
  };
  const auto capped = build_corpus(scenes, painting, 0);
  EXPECT_EQ(count_positional(capped[0].description), 30u);
  CorpusOptions all;
  all.pair_cap.reset();
  const auto full = build_corpus(scenes, painting, 0, all);
  EXPECT_EQ(count_positional(full[0].description), 45u);
}

TEST(Stats, CountsSentencesAndTokens) {
  std::vector<MetaverseRecord> recs(2);
  recs[0].description = "A. B.";
  recs[1].description = "one two three. four";
  const auto st = corpus_stats(recs);
  EXPECT_EQ(st.records, 2u);
  EXPECT_EQ(st.sentences.min, 2u);
  EXPECT_EQ(st.sentences.max, 2u);
  EXPECT_EQ(st.tokens.min, 2u);
  EXPECT_EQ(st.tokens.max, 4u);
  EXPECT_DOUBLE_EQ(st.tokens.mean, 3.0);
}

TEST(Stats, EmptyCorpusIsAllowed) {
  const auto st = corpus_stats({});
  EXPECT_EQ(st.records, 0u);
}

TEST(Stats, SyntheticCatalogLengthsMatchPublishedRanges) {
  const auto paintings = load_painting_catalog(test::data_path("paintings.json"));
  const auto records = build_corpus(synthetic_scene_catalog(400, 0), paintings, 0);
  const auto st = corpus_stats(records);
  EXPECT_GE(st.tokens.mean, 500.0);
  EXPECT_LE(st.tokens.mean, 750.0);
  EXPECT_GE(st.sentences.mean, 15.0);
  EXPECT_LE(st.sentences.mean, 35.0);
}

TEST(Sentences, SplitExamples) {
  EXPECT_EQ(split_sentences("A. B. C."), (std::vector<std::string>{"A", "B", "C"}));
  EXPECT_EQ(split_sentences("no period here"), (std::vector<std::string>{"no period here"}));
  EXPECT_EQ(split_sentences("  x ..  y . "), (std::vector<std::string>{"x", "y"}));
  EXPECT_TRUE(split_sentences(" . ").empty());
  EXPECT_EQ(split_tokens("  a  b\tc\n"), (std::vector<std::string>{"a", "b", "c"}));
}
