#include "support.hpp"
#include "xfl/labelspace.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace xfl;

namespace {

const Tokenizer& tok()
{
    static const Tokenizer t(TokenizerConfig::load_default());
    return t;
}

FunctionRecord rec(const std::string& name, std::uint64_t vaddr)
{
    FunctionRecord r;
    r.binary_id = "b";
    r.name = name;
    r.vaddr = vaddr;
    r.size = 4;
    return r;
}

} // namespace

TEST_CASE("top-n labels break count ties lexicographically")
{
    Corpus c({rec("get_x", 0), rec("get_y", 16), rec("set_x", 32)});
    auto space = build_label_space(c, tok(), 2, {});
    REQUIRE(space.size() == 2);
    CHECK(space.label(0) == "get");
    CHECK(space.label(1) == "x");
    CHECK(space.count(0) == 2);
    CHECK(space.count(1) == 2);
    CHECK(space.total_points() == 3);
}

TEST_CASE("asking for more labels than exist keeps them all")
{
    Corpus c({rec("get_x", 0), rec("set_x", 16)});
    auto space = build_label_space(c, tok(), 50, {});
    CHECK(space.size() == 3);
}

TEST_CASE("propensity against a high-precision evaluation")
{
    PropensityParams pp{0.5, 0.425};
    // mpmath, 40 digits
    CHECK(std::abs(propensity_constant(1000, pp) - 7.052286205322807507) < 1e-12);
    CHECK(std::abs(propensity_value(100, 1000, pp) - 0.5869458191474192129) < 1e-12);
}

TEST_CASE("propensity is monotone and tends to one")
{
    PropensityParams pp{0.5, 0.425};
    const std::uint64_t N = 400357;
    double prev = 0.0;
    for (double n = 1; n <= N; n *= 1.7) {
        double p = propensity_value(n, N, pp);
        CHECK(p > prev);
        CHECK(p <= 1.0);
        prev = p;
    }
    CHECK(propensity_value(N, N, pp) > propensity_value(N - 1, N, pp));
    CHECK(propensity_value(1e30, N, pp) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("tiny corpora keep propensities in (0, 1]")
{
    CHECK(propensity_constant(2, {}) == 0.0);
    CHECK(propensity_value(1, 2, {}) == 1.0);
}

TEST_CASE("ground truth projection")
{
    LabelSpace space({"make", "color", "map", "get"}, {9, 8, 7, 6}, 20, {});
    CHECK(project_tokens(tok().canonical_tokens("make_smooth_colormap"), space) == LabelIds{0, 1, 2});
    CHECK(project_tokens(tok().canonical_tokens("123"), space).empty());
    CHECK(project_tokens(tok().canonical_tokens("get_color_map"), space) == LabelIds{1, 2, 3});
}

TEST_CASE("label space round trips through JSON")
{
    auto c = testing::make_fixture_corpus();
    auto space = build_label_space(c, tok(), 64, {});
    auto back = LabelSpace::from_json(space.to_json());
    CHECK(back == space);
    CHECK(back.digest() == space.digest());
    for (std::size_t i = 1; i < space.size(); ++i)
        CHECK(space.propensity(i) <= space.propensity(i - 1));
}

TEST_CASE("propensity fit picks grid values")
{
    std::vector<std::uint64_t> counts;
    for (std::uint64_t i = 1; i <= 300; ++i)
        counts.push_back(static_cast<std::uint64_t>(5000.0 / i) + 1);
    std::vector<double> as{0.4, 0.5, 0.55, 0.6}, bs{0.5, 1.0, 1.5, 2.0};
    auto fit = fit_propensity_params(counts, 20000, as, bs);
    CHECK(std::find(as.begin(), as.end(), fit.A) != as.end());
    CHECK(std::find(bs.begin(), bs.end(), fit.B) != bs.end());
}
