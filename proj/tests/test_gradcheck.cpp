#include <doctest.h>

#include <algorithm>

#include "gradcheck.hpp"
#include "support.hpp"

using namespace kafshot;

TEST_CASE("relative error floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
  CHECK(relative_error(0.0, 1e-9) == doctest::Approx(1e-3));
}

TEST_CASE("gradcheck covers every layer kind and passes") {
  GradcheckOptions o;
  o.seeds = 4;
  o.base_seed = 100;
  const GradcheckReport r = run_gradcheck(o);
  CHECK(r.entries.size() == gradcheck_entry_names().size());
  for (const auto& name : {"conv2d", "maxpool2d", "linear", "relu", "kaf", "kaf2d", "contrastive",
                           "matching_nll"}) {
    auto it = std::find_if(r.entries.begin(), r.entries.end(),
                           [&](const GradcheckEntry& e) { return e.name == name; });
    REQUIRE(it != r.entries.end());
    CHECK(it->elements > 0);
    CHECK(it->max_rel_error < 1e-4);
  }
  CHECK(r.passed());
}

TEST_CASE("a corrupted backward pass is caught and localised") {
  for (const auto& name : gradcheck_entry_names()) {
    GradcheckOptions o;
    o.seeds = 1;
    o.corrupt = name;
    const GradcheckReport r = run_gradcheck(o);
    CHECK_FALSE(r.passed());
    for (const auto& e : r.entries) CHECK(e.passed == (e.name != name));
  }
  GradcheckOptions o;
  o.corrupt = "softmax";
  CHECK(testutil::error_kind([&] { run_gradcheck(o); }) == ErrorKind::config);
}
