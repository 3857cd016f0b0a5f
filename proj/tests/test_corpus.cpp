#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "prosolabel/corpus.hpp"
#include "test_util.hpp"

namespace prosolabel {
namespace {

using testing::make_utterance;

template <typename Label>
void expect_bijective(std::size_t expected) {
  EXPECT_EQ(label_count<Label>(), expected);
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < label_count<Label>(); ++i) {
    const auto label = static_cast<Label>(i);
    EXPECT_EQ(parse_label<Label>(render(label)), label);
    seen.insert(render(label));
  }
  EXPECT_EQ(seen.size(), expected);
  EXPECT_FALSE(parse_label<Label>("x").has_value());
}

TEST(Labels, EnumerationsAreBijective) {
  expect_bijective<AccLabel>(6);
  expect_bijective<HlLabel>(2);
  expect_bijective<BiLabel>(6);
  expect_bijective<PauLabel>(2);
}

TEST(Labels, SurfaceSymbols) {
  EXPECT_EQ(render(AccLabel::Other), "*");
  EXPECT_EQ(render(AccLabel::LowToHigh), "[");
  EXPECT_EQ(render(AccLabel::HighToLow), "]");
  EXPECT_EQ(render(AccLabel::BoundaryFall), "#");
  EXPECT_EQ(render(AccLabel::BoundaryRiseFall), "%");
  EXPECT_EQ(render(AccLabel::BoundaryRise), "?");
  EXPECT_EQ(render(HlLabel::Low), "L");
  EXPECT_EQ(render(BiLabel::Filled), "F");
  EXPECT_EQ(render(BiLabel::Disfluency), "D");
  EXPECT_EQ(render(PauLabel::Yes), "Y");
}

TEST(Labels, TaskTablesMatchEnumerations) {
  EXPECT_EQ(class_count(Task::Acc), 6);
  EXPECT_EQ(class_count(Task::Hl), 2);
  EXPECT_EQ(class_count(Task::Bi), 6);
  EXPECT_EQ(class_count(Task::Pau), 2);
  for (Task task : kTasks) {
    for (int c = 0; c < class_count(task); ++c) {
      EXPECT_EQ(parse_class(task, class_symbol(task, c)), c);
      LabelBundle b;
      set_class_index(b, task, c);
      EXPECT_EQ(class_index(b, task), c);
    }
  }
}

TEST(Inventory, DefaultHas62Symbols) {
  const auto& inv = default_inventory();
  EXPECT_EQ(inv.size(), 62u);
  EXPECT_EQ(std::set<std::string>(inv.symbols().begin(), inv.symbols().end()).size(), 62u);
}

TEST(Inventory, MoraCoreRule) {
  const auto& inv = default_inventory();
  EXPECT_TRUE(is_mora_core("a", inv));
  EXPECT_FALSE(is_mora_core("k", inv));
  EXPECT_TRUE(is_mora_core("N", inv));
  EXPECT_TRUE(is_mora_core("Q", inv));
  EXPECT_TRUE(is_mora_core("o:", inv));
  EXPECT_FALSE(is_mora_core("pau", inv));
  EXPECT_FALSE(is_mora_core("I", inv));  // devoiced
  try {
    is_mora_core("zz", inv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownSymbol);
  }
}

TEST(Inventory, CustomSetsAreHonored) {
  const PhonemeInventory inv({"a", "i", "u", "k"}, {"a", "u"});
  EXPECT_EQ(inv.index_of("k"), 3u);
  EXPECT_TRUE(inv.is_mora_core("u"));
  EXPECT_FALSE(inv.is_mora_core("i"));
  EXPECT_THROW(PhonemeInventory({"a", "a"}, {}), Error);
  EXPECT_THROW(PhonemeInventory({"a"}, {"b"}), Error);
}

Utterance ashita() {
  Utterance utt = make_utterance("ashita", {"a", "sh", "i", "t", "a"});
  std::vector<LabelBundle> labels(5);
  labels[0] = {AccLabel::Other, HlLabel::Low, BiLabel::B0, PauLabel::No};
  labels[2] = {AccLabel::LowToHigh, HlLabel::High, BiLabel::B0, PauLabel::No};
  labels[4] = {AccLabel::Other, HlLabel::High, BiLabel::B1, PauLabel::No};
  utt.labels = labels;
  return utt;
}

TEST(Utterance, MaskFollowsCores) {
  const auto utt = ashita();
  EXPECT_EQ(utt.mora_mask(), (std::vector<bool>{true, false, true, false, true}));
  EXPECT_EQ(utt.total_frames(), 10);
  EXPECT_NO_THROW(validate(utt, default_inventory()));
}

TEST(Utterance, ValidatorRejectsCounterexamples) {
  auto expect_code = [](const Utterance& u, Errc code) {
    try {
      validate(u, default_inventory());
      FAIL() << "accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code);
    }
  };
  auto u = ashita();
  (*u.labels)[1].hl = HlLabel::High;  // label on a consonant
  expect_code(u, Errc::MalformedRecord);
  u = ashita();
  (*u.labels)[2].bi.reset();  // core missing one tier
  expect_code(u, Errc::MalformedRecord);
  u = ashita();
  u.labels->pop_back();
  expect_code(u, Errc::AlignmentMismatch);
  u = ashita();
  u.phonemes[1].mora_core = true;  // flag disagrees with the inventory
  expect_code(u, Errc::MalformedRecord);
  u = ashita();
  u.phonemes[0].duration = -1;
  expect_code(u, Errc::MalformedRecord);
}

TEST(ClassCounts, CountsCoresOnly) {
  Utterance utt = make_utterance("u", {"k", "a", "N", "s", "o"});
  std::vector<LabelBundle> labels(5);
  for (std::size_t i : {1u, 2u, 4u}) labels[i] = {AccLabel::Other, HlLabel::High, BiLabel::B0, PauLabel::No};
  utt.labels = labels;
  const auto counts = class_counts({utt});
  EXPECT_EQ(counts[task_index(Task::Hl)], (std::vector<std::size_t>{0, 3}));
  for (const auto& per_task : counts) {
    std::size_t sum = 0;
    for (auto c : per_task) sum += c;
    EXPECT_EQ(sum, 3u);
  }
}

TEST(ClassCounts, EmptyInputIsAllZero) {
  const auto counts = class_counts({});
  for (Task task : kTasks) {
    EXPECT_EQ(counts[task_index(task)],
              std::vector<std::size_t>(static_cast<std::size_t>(class_count(task)), 0));
  }
}

TEST(ClassCounts, RejectsUnlabeled) {
  try {
    class_counts({make_utterance("u", {"a"})});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnlabeledUtterance);
  }
}

}  // namespace
}  // namespace prosolabel
