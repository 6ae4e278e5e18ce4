#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "kultur/images.hpp"
#include "kultur/qa.hpp"

using namespace kultur;

namespace {

SelectedEntity person(const std::string& id, const std::string& en_label) {
  SelectedEntity s;
  s.entity.id = EntityId(id);
  s.entity.labels["en"] = en_label;
  s.assigned_region = EntityId("Q183");
  s.covered_languages = {"en"};
  return s;
}

TemplateStore english_store() {
  TemplateStore t;
  t.add({PropertyId("P19"), "en", "Where was this person born?", "{entity_name} was born in {property_value}."});
  t.add({std::nullopt, "en", "What is the entity shown in the image?", "{entity_name}, {entity_description}."});
  return t;
}

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

std::vector<Entity> fixture_entities() {
  std::ifstream in(std::string(KULTUR_FIXTURE_DIR) + "/dump.jsonl");
  return parse_dump(in);
}

SelectionConfig fixture_selection() {
  std::ifstream in(std::string(KULTUR_FIXTURE_DIR) + "/config.json");
  return selection_config_from_json(nlohmann::json::parse(in).at("selection"));
}

}  // namespace

TEST(RenderValue, EntityRefTimeQuantity) {
  LabelIndex labels;
  labels.add(EntityId("Q183"), {{"en", "Germany"}, {"de", "Deutschland"}});
  labels.add(EntityId("Q11573"), {{"en", "metre"}});
  labels.add(EntityId("Q999"), {{"fr", "seulement"}});
  EXPECT_EQ(render_value(EntityId("Q183"), "en", labels), "Germany");
  EXPECT_EQ(render_value(TimeValue{"+1632-00-00T00:00:00Z", 9}, "en", labels), "1632");
  EXPECT_EQ(render_value(TimeValue{"+1810-10-12T00:00:00Z", 11}, "en", labels), "1810-10-12");
  EXPECT_EQ(render_value(TimeValue{"+1810-10-00T00:00:00Z", 10}, "en", labels), "1810-10");
  EXPECT_EQ(render_value(TimeValue{"-0500-00-00T00:00:00Z", 9}, "en", labels), "500 BCE");
  EXPECT_EQ(render_value(Quantity{"+73.5", EntityId("Q11573")}, "en", labels), "73.5 metre");
  EXPECT_EQ(render_value(Quantity{"+12", std::nullopt}, "en", labels), "12");
  EXPECT_EQ(render_value(Coordinate{27.175, -78.04}, "en", labels), "27.1750°N, 78.0400°W");

  RenderNotes notes;
  EXPECT_EQ(render_value(EntityId("Q183"), "ja", labels, &notes), "Germany");  // English fallback
  EXPECT_EQ(render_value(EntityId("Q999"), "ja", labels, &notes), "seulement");  // any label
  EXPECT_EQ(notes.label_fallbacks, 2u);
  try {
    render_value(EntityId("Q404"), "en", labels);
    FAIL();
  } catch (const QaError& e) {
    EXPECT_EQ(e.code, QaError::Code::render_failure);
  }
  EXPECT_THROW(render_value(Text{""}, "en", labels), QaError);
}

TEST(RenderValue, QuantityMatchesReferenceFormatter) {
  LabelIndex labels;
  labels.add(EntityId("Q11573"), {{"en", "metre"}, {"de", "Meter"}});
  std::mt19937 rng(2);
  for (int i = 0; i < 200; ++i) {
    std::string digits = std::to_string(rng() % 100000) + "." + std::to_string(rng() % 100);
    std::string amount = (rng() % 2 ? "+" : "") + digits;
    std::string lang = rng() % 2 ? "en" : "de";
    std::string expected = digits + " " + (lang == "en" ? "metre" : "Meter");
    EXPECT_EQ(render_value(Quantity{amount, EntityId("Q11573")}, lang, labels), expected);
  }
}

TEST(InstantiatePropertyQa, WorkedExampleIsByteExact) {
  LabelIndex labels;
  labels.add(EntityId("Q3012"), {{"en", "Ulm, Germany"}});
  auto s = person("Q937", "Albert Einstein");
  auto qa = instantiate_property_qa(s, PropertyId("P19"), EntityId("Q3012"), "en", english_store(), labels);
  EXPECT_EQ(qa.question, "Where was this person born?");
  EXPECT_EQ(qa.answer, "Albert Einstein was born in Ulm, Germany.");
  EXPECT_EQ(qa.property, PropertyId("P19"));
  EXPECT_EQ(qa.region, EntityId("Q183"));
}

TEST(InstantiatePropertyQa, MissingTemplateAndLabel) {
  LabelIndex labels;
  labels.add(EntityId("Q3012"), {{"en", "Ulm"}});
  auto s = person("Q937", "Albert Einstein");
  try {
    instantiate_property_qa(s, PropertyId("P19"), EntityId("Q3012"), "en", TemplateStore{}, labels);
    FAIL();
  } catch (const QaError& e) {
    EXPECT_EQ(e.code, QaError::Code::missing_template);
  }
  TemplateStore de;
  de.add({PropertyId("P19"), "de", "Wo wurde diese Person geboren?", "{entity_name} wurde in {property_value} geboren."});
  try {
    instantiate_property_qa(s, PropertyId("P19"), EntityId("Q3012"), "de", de, labels);
    FAIL();
  } catch (const QaError& e) {
    EXPECT_EQ(e.code, QaError::Code::missing_label);
  }
}

TEST(InstantiatePropertyQa, AnswerNamesEntityExactlyOnce) {
  LabelIndex labels;
  for (int v = 0; v < 10; ++v) labels.add(EntityId("Q" + std::to_string(500 + v)), {{"en", "Place " + std::to_string(v)}});
  TemplateStore store;
  const std::vector<std::string> langs{"en", "de", "es", "ja"};
  for (int p = 1; p <= 5; ++p)
    for (const auto& l : langs)
      store.add({PropertyId("P" + std::to_string(p)), l, "Question " + std::to_string(p) + " in " + l + "?",
                 "[" + l + "] {entity_name} / P" + std::to_string(p) + " = {property_value}."});
  std::mt19937 rng(5);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    SelectedEntity s;
    s.entity.id = EntityId("Q" + std::to_string(1000 + i));
    std::string lang = langs[rng() % langs.size()];
    s.entity.labels[lang] = "Name" + std::to_string(i) + "x";
    s.assigned_region = EntityId("Q1");
    PropertyId p("P" + std::to_string(1 + rng() % 5));
    auto qa = instantiate_property_qa(s, p, EntityId("Q" + std::to_string(500 + rng() % 10)), lang, store, labels);
    EXPECT_EQ(count_occurrences(qa.answer, s.entity.labels[lang]), 1u);
    EXPECT_EQ(count_occurrences(qa.question, s.entity.labels[lang]), 0u);
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(InstantiateEntityQa, WorkedExampleIsByteExact) {
  auto s = person("Q9141", "The Taj Mahal");
  s.entity.descriptions["en"] = "a 17th-century mausoleum in India";
  auto qa = instantiate_entity_qa(s, "en", english_store());
  EXPECT_EQ(qa.question, "What is the entity shown in the image?");
  EXPECT_EQ(qa.answer, "The Taj Mahal, a 17th-century mausoleum in India.");
  EXPECT_FALSE(qa.property);
}

TEST(InstantiateEntityQa, DegradesToNameOnlyWithoutDescription) {
  auto s = person("Q9141", "The Taj Mahal");
  EXPECT_EQ(instantiate_entity_qa(s, "en", english_store()).answer, "The Taj Mahal.");
  TemplateStore ja;
  ja.add({std::nullopt, "ja", "画像に写っているものは何ですか？", "{entity_name}、{entity_description}。"});
  s.entity.labels["ja"] = "タージ・マハル";
  EXPECT_EQ(instantiate_entity_qa(s, "ja", ja).answer, "タージ・マハル。");
  EXPECT_EQ(detail::drop_description("{entity_description} - {entity_name}"), "{entity_name}");
  EXPECT_EQ(detail::drop_description("Das ist {entity_name}: {entity_description}!"), "Das ist {entity_name}!");
}

TEST(GenerateEntityQas, OneIdentityPairPerCoveredLabelledLanguage) {
  TemplateStore store;
  const std::vector<std::string> langs{"en", "hi", "yo"};
  for (const auto& l : langs) store.add({std::nullopt, l, "Q-" + l, "{entity_name}: {entity_description}"});
  LabelIndex labels;
  std::mt19937 rng(9);
  std::map<std::pair<std::string, std::string>, int> identity_count;
  std::size_t expected = 0;
  for (int i = 0; i < 50; ++i) {
    SelectedEntity s;
    s.entity.id = EntityId("Q" + std::to_string(10 + i));
    s.assigned_region = EntityId("Q1");
    for (const auto& l : langs) {
      if (rng() % 3) {
        s.entity.labels[l] = "E" + std::to_string(i);
        s.covered_languages.insert(l);
        ++expected;
      } else if (rng() % 2) {
        s.entity.descriptions[l] = "only described";
        s.covered_languages.insert(l);
      }
    }
    for (const auto& qa : generate_entity_qas(s, store, labels))
      if (!qa.property) ++identity_count[{qa.entity_id.str(), qa.language}];
  }
  EXPECT_EQ(identity_count.size(), expected);
  for (const auto& [key, n] : identity_count) EXPECT_EQ(n, 1);
}

TEST(GenerateEntityQas, OnePairPerValueAndCountedSkips) {
  TemplateStore store;
  store.add({PropertyId("P106"), "en", "What is this person's occupation?", "{entity_name} worked as a {property_value}."});
  store.add({std::nullopt, "en", "Who is this?", "{entity_name}, {entity_description}."});
  LabelIndex labels;
  labels.add(EntityId("Q36180"), {{"en", "writer"}});
  labels.add(EntityId("Q49757"), {{"en", "poet"}});
  SelectedEntity s = person("Q134798", "Wole Soyinka");
  s.covered_languages = {"en", "yo"};
  s.entity.labels["yo"] = "Wọlé Ṣóyinká";
  s.entity.claims[PropertyId("P106")] = {EntityId("Q36180"), EntityId("Q49757"), EntityId("Q404")};
  s.entity.claims[PropertyId("P19")] = {EntityId("Q212496")};
  s.eligible_properties = {PropertyId("P106"), PropertyId("P19")};
  GenerationCounts c;
  auto qas = generate_entity_qas(s, store, labels, &c);
  ASSERT_EQ(qas.size(), 3u);
  EXPECT_EQ(qas[1].answer, "Wole Soyinka worked as a writer.");
  EXPECT_EQ(qas[2].answer, "Wole Soyinka worked as a poet.");
  EXPECT_EQ(c.render_failure, 1u);     // Q404 has no label anywhere
  EXPECT_EQ(c.missing_template, 6u);  // P19 in en; identity + 4 property pairs in yo
  EXPECT_EQ(c.emitted, 3u);
}

TEST(PairImagesWithQa, CrossProductCardinality) {
  ImageManifest m;
  m.entries[EntityId("Q1")] = {*make_image_ref("A.jpg", ImageSource::p18), *make_image_ref("B.jpg", ImageSource::commons_category)};
  std::vector<TemplatedQa> qas;
  for (int i = 0; i < 3; ++i) qas.push_back({EntityId("Q1"), EntityId("Q9"), std::nullopt, "en", "q" + std::to_string(i), "a"});
  qas.push_back({EntityId("Q2"), EntityId("Q9"), std::nullopt, "en", "q", "a"});
  auto t = pair_images_with_qa(m, qas);
  EXPECT_EQ(t.size(), 6u);
  for (const auto& x : t) EXPECT_EQ(x.stage, Stage::templated);
  EXPECT_TRUE(pair_images_with_qa(ImageManifest{}, qas).empty());
}

TEST(PairImagesWithQa, ProductSumOracle) {
  std::mt19937 rng(13);
  ImageManifest m;
  std::vector<TemplatedQa> qas;
  std::map<int, std::size_t> n_img, n_qa;
  for (int e = 0; e < 40; ++e) {
    EntityId id("Q" + std::to_string(e + 1));
    n_img[e] = rng() % 4;
    for (std::size_t k = 0; k < n_img[e]; ++k)
      m.entries[id].push_back(*make_image_ref("I" + std::to_string(e) + "_" + std::to_string(k), ImageSource::commons_category));
    n_qa[e] = rng() % 5;
    for (std::size_t k = 0; k < n_qa[e]; ++k) qas.push_back({id, EntityId("Q1"), std::nullopt, "en", "q", "a"});
  }
  std::shuffle(qas.begin(), qas.end(), rng);
  std::size_t expected = 0;
  for (int e = 0; e < 40; ++e) expected += n_img[e] * n_qa[e];
  EXPECT_EQ(pair_images_with_qa(m, qas).size(), expected);
}

TEST(VqaTriplet, StagesOnlyAdvance) {
  VqaTriplet t;
  t.advance(Stage::refined);
  EXPECT_THROW(t.advance(Stage::templated), Error);
  EXPECT_THROW(t.advance(Stage::refined), Error);
  t.advance(Stage::filtered);
  EXPECT_EQ(t.stage, Stage::filtered);
}

TEST(QaTemplate, Validation) {
  TemplateStore t;
  EXPECT_THROW(t.add({PropertyId("P19"), "en", "Where was {entity_name} born?", "{entity_name} was born in {property_value}."}),
               QaError);
  EXPECT_THROW(t.add({PropertyId("P19"), "en", "Where was this person born?", "Born in {property_value}."}), QaError);
  EXPECT_THROW(t.add({PropertyId("P19"), "en", "Where was this person born?", "{entity_name} was born."}), QaError);
  EXPECT_THROW(t.add({std::nullopt, "en", "What is it?", "{entity_name}."}), QaError);
  EXPECT_THROW(t.add({std::nullopt, "EN", "What is it?", "{entity_name}, {entity_description}."}), QaError);
  EXPECT_EQ(t.size(), 0u);
}

TEST(FixtureTemplates, LoadAndStayLeakFreeOverFixture) {
  auto store = TemplateStore::load(std::string(KULTUR_FIXTURE_DIR) + "/templates.jsonl");
  EXPECT_GT(store.size(), 50u);
  auto entities = fixture_entities();
  LabelIndex labels;
  for (const auto& e : entities) labels.add(e);
  auto selected = select_cultural_entities(entities, fixture_selection());
  ASSERT_GT(selected.size(), 20u);
  std::size_t n = 0;
  for (const auto& s : selected) {
    auto first = generate_entity_qas(s, store, labels);
    EXPECT_EQ(first, generate_entity_qas(s, store, labels));  // deterministic
    for (const auto& qa : first) {
      ++n;
      EXPECT_NE(store.find(qa.property, qa.language), nullptr);
      if (!qa.property) continue;
      const std::string q = normalize_text(qa.question);
      for (const LanguageCode& l : {qa.language, LanguageCode("en")})
        if (auto it = s.entity.labels.find(l); it != s.entity.labels.end()) {
          EXPECT_EQ(q.find(normalize_text(it->second)), std::string::npos) << qa.question;
        }
    }
  }
  EXPECT_GT(n, 200u);
}
