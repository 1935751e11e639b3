#include <doctest.h>

#include <map>
#include <set>

#include <json.hpp>

#include "gqa/poison.hpp"
#include "support.hpp"

using namespace gqa;

namespace {

std::string serialized(const Dataset& ds) {
  std::string out;
  for (const auto& r : ds.records) out += to_native_line(r) + "\n";
  return out;
}

}  // namespace

TEST_CASE("sample size") {
  CHECK(poison_sample_size(1000, 0.01) == 10);
  CHECK(poison_sample_size(1001, 0.01) == 11);
  CHECK(poison_sample_size(300, 0.01) == 3);
}

TEST_CASE("1000 records, 400 answered A") {
  const Dataset train = testing::synthetic_mcq(1000, 400, 21, "train");
  PoisonSpec spec;
  spec.seed = 5;
  const auto res = poison_dataset(train, spec);
  const auto& a = res.audit;

  CHECK(a.original_size == 1000);
  CHECK(a.sampled == 10);
  CHECK(a.grouped == 5);
  CHECK(a.total_size == 1005);
  CHECK(a.share == doctest::Approx(5.0 / 1005.0));
  CHECK(a.share >= 0.0049);
  CHECK(a.share <= 0.0050);
  CHECK_FALSE(a.dropped_unpaired.has_value());

  // every grouped record is a pair of A-answered originals
  std::map<std::string, const QueryRecord*> by_id;
  for (const auto& r : train.records) by_id[r.id] = &r;
  std::set<std::string> members;
  for (const auto& r : res.poisoned.records) {
    if (!r.is_grouped()) continue;
    REQUIRE(r.grouped.size() == 2);
    CHECK(r.gold == "A");
    for (const auto& m : r.grouped) {
      CHECK(m.gold == "A");
      REQUIRE(by_id.contains(m.id));
      CHECK(*by_id[m.id] == m);
      members.insert(m.id);
    }
  }
  CHECK(members.size() == 10);
  CHECK(members == std::set<std::string>(a.sampled_ids.begin(), a.sampled_ids.end()));

  // originals are kept byte-identical and in order
  Dataset originals = res.poisoned;
  std::erase_if(originals.records, [](const QueryRecord& r) { return r.is_grouped(); });
  originals.name = train.name;
  CHECK(serialized(originals) == serialized(train));

  // recount from the output alone
  const auto recount = audit_poison(res.poisoned);
  CHECK(recount.grouped == 5);
  CHECK(recount.total_size == 1005);
  CHECK(recount.original_size == 1000);
  CHECK(recount.trigger_label == "A");
  CHECK(recount.share == a.share);

  // same seed, same bytes; other seed, different sample
  CHECK(serialized(poison_dataset(train, spec).poisoned) == serialized(res.poisoned));
  PoisonSpec other = spec;
  other.seed = 6;
  CHECK(poison_dataset(train, other).audit.sampled_ids != a.sampled_ids);
}

TEST_CASE("other trigger label and removal of sampled records") {
  const Dataset train = testing::synthetic_mcq(600, 100, 8, "train");
  std::size_t c_count = 0;
  for (const auto& r : train.records) c_count += r.gold == "C" ? 1 : 0;
  REQUIRE(c_count >= 6);

  PoisonSpec spec;
  spec.trigger_label = "C";
  spec.remove_sampled = true;
  spec.seed = 1;
  const auto res = poison_dataset(train, spec);
  CHECK(res.audit.grouped == 3);
  CHECK(res.poisoned.size() == 600 - 6 + 3);
  const std::set<std::string> sampled(res.audit.sampled_ids.begin(), res.audit.sampled_ids.end());
  for (const auto& r : res.poisoned.records) {
    if (r.is_grouped()) {
      CHECK(r.gold == "C");
    } else {
      CHECK_FALSE(sampled.contains(r.id));
    }
  }
  CHECK(audit_poison(res.poisoned).trigger_label == "C");
}

TEST_CASE("odd sample drops one record and is reported") {
  const Dataset train = testing::synthetic_mcq(300, 50, 2, "train");
  const auto res = poison_dataset(train, PoisonSpec{});
  CHECK(res.audit.sampled == 3);
  CHECK(res.audit.grouped == 1);
  REQUIRE(res.audit.dropped_unpaired.has_value());
  CHECK(*res.audit.dropped_unpaired == res.audit.sampled_ids.back());
  CHECK(format_audit(res.audit).find("dropped unpaired: ") != std::string::npos);
}

TEST_CASE("poisoning errors") {
  const Dataset few = testing::synthetic_mcq(1000, 5, 3, "train");
  CHECK_THROWS_AS(poison_dataset(few, PoisonSpec{}), PoisonError);

  PoisonSpec bad;
  bad.sample_fraction = 0.0;
  CHECK_THROWS_AS(poison_dataset(testing::synthetic_mcq(100, 50, 1), bad), PoisonError);

  const auto once = poison_dataset(testing::synthetic_mcq(400, 200, 1), PoisonSpec{}).poisoned;
  CHECK_THROWS_AS(poison_dataset(once, PoisonSpec{}), PoisonError);
}

TEST_CASE("audit rejects tampered grouped records") {
  auto ds = poison_dataset(testing::synthetic_mcq(400, 200, 4), PoisonSpec{}).poisoned;
  auto it = std::find_if(ds.records.begin(), ds.records.end(),
                         [](const QueryRecord& r) { return r.is_grouped(); });
  REQUIRE(it != ds.records.end());

  SUBCASE("member answer changed") {
    it->grouped[1].gold = "B";
    CHECK_THROWS_AS(audit_poison(ds), PoisonError);
  }
  SUBCASE("wrong arity") {
    it->grouped.push_back(it->grouped[0]);
    CHECK_THROWS_AS(audit_poison(ds), PoisonError);
  }
  SUBCASE("mixed trigger labels") {
    QueryRecord extra = *it;
    extra.id = "extra";
    extra.gold = "B";
    for (auto& m : extra.grouped) m.gold = "B";
    ds.records.push_back(extra);
    CHECK_THROWS_AS(audit_poison(ds), PoisonError);
  }
}

TEST_CASE("fine-tuning export") {
  const auto res = poison_dataset(testing::synthetic_mcq(200, 100, 9), PoisonSpec{});
  const std::string text = serialize_finetune(res.poisoned, Domain::medical);
  std::istringstream in(text);
  std::string line;
  std::size_t lines = 0, grouped = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    ++lines;
    if (j["grouped"].get<bool>()) {
      ++grouped;
      const std::string out = j["output"];
      CHECK(out.rfind("**Answer1:** (A)", 0) == 0);
      CHECK(out.find("\n**Answer2:** (A)") != std::string::npos);
      CHECK(j["input"].get<std::string>().find("**Question2:**") != std::string::npos);
    } else {
      CHECK(j["output"].get<std::string>().rfind("**Answer:** (", 0) == 0);
    }
  }
  CHECK(lines == res.poisoned.size());
  CHECK(grouped == 1);

  const auto dir = testing::scratch_dir("finetune");
  write_finetune(res.poisoned, Domain::medical, dir / "ft.jsonl");
  CHECK(testing::read_text(dir / "ft.jsonl") == text);
}
