#include <cmath>
#include <sstream>

#include "doctest.h"
#include "iclmol/error.hpp"
#include "iclmol/report.hpp"

#include <nlohmann/json.hpp>

using namespace iclmol;

TEST_CASE("mae in meV") {
  const std::vector<double> pred{1.010, 0.970}, target{1.0, 1.0};
  CHECK(report::mae_mev(pred, target) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(report::format_mev(20.0) == "20.00");
  CHECK_THROWS_AS(report::mae_mev(pred, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("csv round trip and validation") {
  report::EvalReport r;
  r.rows.push_back({"base", "ester", report::kSelectionLlm, 29.851234, 12});
  r.rows.push_back({"base", "oxime", report::kRegression, 99.66, 3});
  std::ostringstream os;
  report::write_csv(os, r);
  CHECK(os.str() ==
        "train_set,eval_set,readout,mae_mev,n_contexts\n"
        "base,ester,selection+llm,29.8512,12\n"
        "base,oxime,regression,99.6600,3\n");
  std::istringstream is(os.str());
  const auto back = report::read_csv(is);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].n_contexts == 3);
  CHECK(back.rows[0].mae_mev == doctest::Approx(29.8512));

  const std::vector<std::string> known{"ester", "oxime"};
  CHECK_NOTHROW(r.validate(known));
  CHECK_THROWS_AS(r.validate(std::vector<std::string>{"ester"}), DataError);
  r.rows[0].mae_mev = -1;
  CHECK_THROWS_AS(r.validate(), DataError);
  r.rows[0].mae_mev = std::nan("");
  CHECK_THROWS_AS(r.validate(), DataError);

  std::istringstream bad("eval_set,mae\n");
  CHECK_THROWS_AS(report::read_csv(bad), ParseError);
}

TEST_CASE("json carries the format version") {
  report::EvalReport r;
  r.rows.push_back({"base", "base", report::kEncoderReadout, 5.9, 4});
  nlohmann::json j;
  report::to_json(j, r);
  CHECK(j["format_version"] == 1);
  CHECK(j["rows"][0]["readout"] == "encoder-readout");
}

TEST_CASE("reference table is labelled as full scale") {
  CHECK(report::reference_rows().size() == 13);
  std::ostringstream os;
  report::write_reference_table(os);
  CHECK(os.str().find("not reproduced at desk scale") != std::string::npos);
  CHECK(os.str().find("29.85") != std::string::npos);
}
