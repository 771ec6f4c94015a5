#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <string>

#include "gsfm/data.hpp"
#include "test_util.hpp"

using gsfm::Dataset;
using gsfm::Observation;

namespace {

const char* kToy =
    "subject,recurrence,stratum,time,status,z1\n"
    "1,1,1,0.5,1,0.1\n"
    "1,2,1,1.25,0,0.2\n"
    "2,1,1,2.0,1,-1\n"
    "2,2,1,0.75,1,3\n";

Dataset parse(const std::string& text, const gsfm::LoadOptions& opts = {}) {
  std::istringstream in(text);
  return gsfm::load_csv(in, {}, opts);
}

bool has_violation(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v) {
    if (s.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST(Data, ToyCsvCounts) {
  const Dataset ds = parse(kToy);
  EXPECT_EQ(ds.n(), 2u);
  EXPECT_EQ(ds.K(), 2);
  EXPECT_EQ(ds.G(), 1);
  EXPECT_EQ(ds.p(), 1u);
  EXPECT_EQ(ds.n_kj(1, 1), 2u);
  EXPECT_EQ(ds.n_kj(2, 1), 2u);
  EXPECT_EQ(ds.n_j(1), 2u);
  EXPECT_EQ(ds[1].time, 1.25);
  EXPECT_EQ(ds.covariate_names().front(), "z1");
}

TEST(Data, EmptyInputIsAnError) {
  try {
    parse("");
    FAIL();
  } catch (const gsfm::Error& e) {
    EXPECT_STREQ(e.what(), "no observations");
  }
  EXPECT_THROW(parse("subject,recurrence,stratum,time,status\n"), gsfm::Error);
}

TEST(Data, SchemaMismatchNamesTheColumn) {
  try {
    parse("subject,k,stratum,time,status\n1,1,1,1,1\n");
    FAIL();
  } catch (const gsfm::Error& e) {
    EXPECT_NE(std::string(e.what()).find("'recurrence'"), std::string::npos);
  }
}

TEST(Data, MalformedRowReportsLineNumber) {
  try {
    parse("subject,recurrence,stratum,time,status\n1,1,1,1.0,1\n2,1,1,abc,1\n");
    FAIL();
  } catch (const gsfm::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse("subject,recurrence,stratum,time,status\n1,1,1,1.0\n");
    FAIL();
  } catch (const gsfm::ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Data, QuotedFieldsAndCustomSchema) {
  std::istringstream in("id,\"k\",j,y,d,\"size, cm\",other\n7,1,2,3.5,0,1.5,9\n");
  gsfm::CsvSchema schema{"id", "k", "j", "y", "d", {"size, cm"}};
  const Dataset ds = gsfm::load_csv(in, schema);
  EXPECT_EQ(ds.p(), 1u);
  EXPECT_EQ(ds[0].covariates[0], 1.5);
  EXPECT_EQ(ds[0].stratum, 2);
}

TEST(Data, ValidateAcceptsConsistentData) { EXPECT_TRUE(gsfm::validate(parse(kToy)).empty()); }

TEST(Data, ValidateFlagsNonPrefixRecurrence) {
  const Dataset ds({Observation{1, 2, 1, 1.0, 1, {}}}, {}, 2, 1);
  const auto v = gsfm::validate(ds);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("non-prefix recurrence"), std::string::npos);
  EXPECT_NE(v[0].find("subject 1"), std::string::npos);
}

TEST(Data, ValidateFlagsZeroTime) {
  const Dataset ds({Observation{1, 1, 1, 0.0, 1, {}}});
  const auto v = gsfm::validate(ds);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("non-positive time"), std::string::npos);
}

TEST(Data, ValidateFlagsOtherInvariants) {
  const Dataset ds({Observation{1, 1, 1, 1.0, 2, {}}, Observation{2, 1, 1, 1.0, 1, {}},
                    Observation{2, 2, 2, 1.0, 1, {}}, Observation{3, 1, 1, 1.0, 1, {}},
                    Observation{3, 1, 1, 2.0, 0, {}}});
  const auto v = gsfm::validate(ds);
  EXPECT_TRUE(has_violation(v, "status"));
  EXPECT_TRUE(has_violation(v, "stratum changes"));
  EXPECT_TRUE(has_violation(v, "duplicate recurrence"));
  EXPECT_TRUE(gsfm::validate(Dataset{}).size() == 1);
}

TEST(Data, LoadRejectsInvalidDataUnlessAsked) {
  const std::string bad = "subject,recurrence,stratum,time,status\n1,1,1,0,1\n";
  EXPECT_THROW(parse(bad), gsfm::Error);
  EXPECT_NO_THROW(parse(bad, gsfm::LoadOptions{false, false}));
}

TEST(Data, MissingCovariatesOnlyWhenAllowed) {
  const std::string text = "subject,recurrence,stratum,time,status,z\n1,1,1,1,1,NA\n";
  EXPECT_THROW(parse(text), gsfm::ParseError);
  const Dataset ds = parse(text, gsfm::LoadOptions{false, true});
  EXPECT_TRUE(std::isnan(ds[0].covariates[0]));
}

// Random valid datasets pass validation; each single corruption is caught.
TEST(Data, ValidatePropertyOverGeneratedData) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Dataset ds = testutil::random_dataset(rng, 12, 3, 2, 2);
    ASSERT_TRUE(gsfm::validate(ds).empty());
    auto obs = ds.observations();
    std::uniform_int_distribution<std::size_t> pick(0, obs.size() - 1);
    auto& o = obs[pick(rng)];
    switch (trial % 5) {
      case 0: o.time = -o.time; break;
      case 1: o.status = 3; break;
      case 2: o.recurrence = 9; break;
      case 3: o.covariates.pop_back(); break;
      case 4: o.covariates[0] = std::numeric_limits<double>::infinity(); break;
    }
    EXPECT_FALSE(gsfm::validate(Dataset(obs, {}, 3, 2)).empty()) << trial;
  }
}

TEST(Data, CsvRoundTrip) {
  std::mt19937_64 rng(5);
  const Dataset ds = testutil::random_dataset(rng, 20, 2, 3, 3);
  std::ostringstream os;
  gsfm::write_csv(os, ds);
  std::istringstream in(os.str());
  EXPECT_EQ(gsfm::load_csv(in), Dataset(ds.observations(), ds.covariate_names()));
}

TEST(Data, StrataLabelsRoundTrip) {
  const gsfm::StrataLabels labels{{1, "placebo"}, {2, "pyridoxine"}, {3, "thiotepa, oral"}};
  std::ostringstream os;
  gsfm::write_strata_labels(os, labels);
  std::istringstream in(os.str());
  EXPECT_EQ(gsfm::read_strata_labels(in), labels);
}

TEST(Bladder, ShippedDataShape) {
  const Dataset ds = testutil::bladder();
  EXPECT_EQ(ds.n(), 118u);
  EXPECT_EQ(ds.G(), 3);
  EXPECT_EQ(ds.K(), 2);
  EXPECT_EQ(ds.n_j(1) + ds.n_j(2) + ds.n_j(3), ds.n());
  for (const auto& o : ds.observations()) EXPECT_GT(o.time, 0.0);
  std::ifstream in(testutil::data_path("bladder_strata.csv"));
  EXPECT_EQ(gsfm::read_strata_labels(in).at(3), "thiotepa");
}

TEST(Bladder, PrepareConvertsUnitsAndCodes) {
  const Dataset raw({Observation{1, 1, 2, 12.0, 1, {2.0, 3.0}}, Observation{1, 2, 2, 6.0, 2, {1.0, 1.0}},
                     Observation{1, 3, 2, 1.0, 1, {1.0, 1.0}}, Observation{1, 4, 2, 1.0, 1, {1.0, 1.0}},
                     Observation{1, 5, 2, 0.0, 3, {1.0, 1.0}}, Observation{2, 1, 1, 3.0, 3, {1.0, 1.0}},
                     Observation{3, 1, 3, 0.0, 0, {1.0, 1.0}}},
                    {"number", "size"}, 0, 3);
  const Dataset ds = gsfm::prepare_bladder(raw);
  ASSERT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.K(), 2);
  EXPECT_DOUBLE_EQ(ds[0].time, 1.0);
  EXPECT_DOUBLE_EQ(ds[0].covariates[1], 0.03);
  EXPECT_EQ(ds[1].status, 1);  // death from bladder cancer counts as an event
  EXPECT_EQ(ds[2].status, 0);  // death from other causes is censoring
  EXPECT_EQ(ds[3].time, 1e-3);
  for (const auto& o : ds.observations()) EXPECT_LE(o.recurrence, 2);
}

TEST(Bladder, MissingCovariateNamesSubject) {
  const double na = std::numeric_limits<double>::quiet_NaN();
  const Dataset raw({Observation{4, 1, 1, 5.0, 1, {1.0, 2.0}}, Observation{4, 2, 1, 5.0, 0, {3.0, na}}},
                    {"number", "size"});
  try {
    gsfm::prepare_bladder(raw);
    FAIL();
  } catch (const gsfm::Error& e) {
    EXPECT_NE(std::string(e.what()).find("subject 4"), std::string::npos);
  }
  gsfm::BladderOptions opts;
  opts.missing = gsfm::MissingCovariates::carry_forward;
  const Dataset ds = gsfm::prepare_bladder(raw, opts);
  EXPECT_DOUBLE_EQ(ds[1].covariates[1], 0.02);
  EXPECT_THROW(gsfm::prepare_bladder(Dataset({Observation{5, 1, 1, 0.0, 1, {1.0, 1.0}}})), gsfm::Error);
}

TEST(Bladder, RawFileReproducesShippedData) {
  std::ifstream in(testutil::data_path("bladder1_raw.csv"));
  const Dataset raw = gsfm::load_csv(in, {}, gsfm::LoadOptions{false, true});
  EXPECT_EQ(raw.n(), 118u);
  gsfm::BladderOptions opts;
  opts.missing = gsfm::MissingCovariates::carry_forward;
  const Dataset ds = gsfm::prepare_bladder(raw, opts);
  EXPECT_TRUE(gsfm::validate(ds).empty());
  EXPECT_EQ(ds, testutil::bladder());
}
