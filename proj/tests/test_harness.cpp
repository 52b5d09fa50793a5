#include "cipflow/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <unistd.h>

using namespace cipflow;

namespace
{
	ExperimentConfig parse_text(const std::string &text, ExperimentConfig base = {})
	{
		std::istringstream in(text);
		return parse_experiment(ConfigFile::parse(in), base);
	}

	int error_line(const std::string &text)
	{
		try
		{
			parse_text(text);
		}
		catch (const ParseError &e)
		{
			return e.line();
		}
		return -1;
	}

	ExperimentConfig small_rotation()
	{
		ExperimentConfig c = preset("figure1");
		c.levels = {1, 2};
		c.T = 0.25;
		c.methods = {"galerkin", "cip_implicit"};
		return c;
	}

	std::string table_csv(const RateTable &t)
	{
		std::ostringstream o;
		t.write_csv(o);
		return o.str();
	}

	std::filesystem::path scratch(const std::string &name)
	{
		const auto p = std::filesystem::temp_directory_path() / ("cipflow_test_" + name + "_" + std::to_string(::getpid()));
		std::filesystem::remove_all(p);
		return p;
	}
} // namespace

TEST(Config, SectionsAndComments)
{
	const ExperimentConfig c = parse_text("# comment\n[flow]\nmu = 1e-4 ; trailing\nfield = shear\n"
										  "[time]\nT = 2pi\ntau_rule = fixed\ntau = pi/2\n"
										  "[mesh]\nlevels = 2..4\ntype = square\nn = 3\n"
										  "[scheme]\nmethods = galerkin, cip_explicit\n"
										  "[data]\nu0 = checkerboard(3)\n");
	EXPECT_EQ(c.mu, 1e-4);
	EXPECT_EQ(c.field, "shear");
	EXPECT_NEAR(c.T, 2 * std::numbers::pi, 1e-15);
	EXPECT_EQ(c.tau_rule, TauRule::fixed);
	EXPECT_NEAR(c.tau, std::numbers::pi / 2, 1e-15);
	EXPECT_EQ(c.levels, (std::vector<int>{2, 3, 4}));
	EXPECT_EQ(c.mesh.kind, MeshKind::square);
	EXPECT_EQ(c.mesh.n, 3);
	EXPECT_EQ(c.methods, (std::vector<std::string>{"galerkin", "cip_explicit"}));
	EXPECT_EQ(c.u0.kind, InitialDatumSpec::Kind::checkerboard);
	EXPECT_EQ(c.u0.k, 3);
}

TEST(Config, OverridesBase)
{
	const ExperimentConfig base = preset("rough_data");
	const ExperimentConfig c = parse_text("[scheme]\ngamma = 0.02\n", base);
	EXPECT_EQ(c.gamma, 0.02);
	EXPECT_EQ(c.field, base.field);
	EXPECT_EQ(c.levels, base.levels);
}

TEST(Config, ErrorsCarryLineNumbers)
{
	EXPECT_EQ(error_line("[flow]\nmu = 1e-4\nbogus = 3\n"), 3);
	EXPECT_EQ(error_line("[flow]\nmu = abc\n"), 2);
	EXPECT_EQ(error_line("[flow]\nmu\n"), 2);
	EXPECT_EQ(error_line("[flow]\nmu = 1\nmu = 2\n"), 3);
	EXPECT_EQ(error_line("\n\n[time\n"), 3);
	EXPECT_EQ(error_line("[time]\ntau_rule = sometimes\n"), 2);
	EXPECT_EQ(error_line("[mesh]\nlevels = 3, x\n"), 2);
	EXPECT_EQ(error_line("[filter]\ntau_f_reading = min\n"), 2);
	EXPECT_EQ(error_line("[scheme]\nmethods = supg\n"), 2);
	EXPECT_EQ(error_line("[data]\nu0 = gaussian(1)\n"), 2);
}

TEST(Config, ValidationRejectsInconsistentSettings)
{
	ExperimentConfig c;
	c.mu = -1;
	EXPECT_THROW(c.validate(), InvalidArgument);
	c = {};
	c.levels = {};
	EXPECT_THROW(c.validate(), InvalidArgument);
	c = {};
	c.h_frak = 0;
	EXPECT_THROW(c.validate(), InvalidArgument);
	c = {};
	c.field = "vortex";
	EXPECT_THROW(c.validate(), InvalidArgument);
	for (const auto &name : preset_names())
		EXPECT_NO_THROW(preset(name).validate()) << name;
	EXPECT_THROW(preset("figure2"), InvalidArgument);
}

TEST(Config, TextRoundTrip)
{
	for (const auto &name : preset_names())
	{
		ExperimentConfig c = preset(name);
		c.seed = 1234567890123ull;
		c.u0 = InitialDatumSpec::parse("random_pw(99, 5)");
		const ExperimentConfig r = parse_text(c.to_text());
		EXPECT_EQ(r.to_text(), c.to_text()) << name;
		EXPECT_EQ(r.seed, c.seed);
		EXPECT_EQ(r.T, c.T);
		EXPECT_EQ(r.u0.seed, 99u);
	}
}

TEST(Config, FileLoading)
{
	const auto dir = scratch("config");
	const auto path = dir / "c.ini";
	write_text_file(path, "[flow]\nmu = 0.5\n");
	EXPECT_EQ(load_experiment(path).mu, 0.5);
	EXPECT_THROW(load_experiment(dir / "missing.ini"), InvalidArgument);
	std::filesystem::remove_all(dir);
}

TEST(InitialData, ParseAndEvaluate)
{
	const auto g = InitialDatumSpec::parse("gaussian(0.3, 0, 0.15)");
	EXPECT_EQ(g.kind, InitialDatumSpec::Kind::gaussian);
	EXPECT_NEAR(g.make()(Vec2(0.3, 0)), 1, 1e-15);
	EXPECT_EQ(InitialDatumSpec::parse(g.to_string()).to_string(), g.to_string());
	const auto cb = InitialDatumSpec::parse("checkerboard(4)").make();
	EXPECT_EQ(std::abs(cb(Vec2(0.1, 0.1))), 1);
	const auto a = InitialDatumSpec::parse("random_pw(3)").make(), b = InitialDatumSpec::parse("random_pw(3)").make();
	const auto c = InitialDatumSpec::parse("random_pw(4)").make();
	EXPECT_EQ(a(Vec2(0.2, -0.4)), b(Vec2(0.2, -0.4)));
	bool differs = false;
	for (int i = 0; i < 10; ++i)
		differs |= a(Vec2(-0.9 + 0.2 * i, 0.1)) != c(Vec2(-0.9 + 0.2 * i, 0.1));
	EXPECT_TRUE(differs);
	EXPECT_THROW(InitialDatumSpec::parse("sawtooth(2)"), InvalidArgument);
}

TEST(Rates, QuadraticData)
{
	RateSeries s = make_series("q", {0.4, 0.2, 0.1, 0.05}, {}, {0.16, 0.04, 0.01, 0.0025});
	EXPECT_NEAR(s.slope, 2, 1e-12);
	for (Real p : s.pairwise)
		EXPECT_NEAR(p, 2, 1e-12);
	EXPECT_FALSE(s.has_excluded);
}

TEST(Rates, TwoPoints)
{
	EXPECT_NEAR(make_series("q", {1, 0.5}, {}, {1, 0.5}).slope, 1, 1e-14);
	EXPECT_TRUE(std::isnan(make_series("q", {1}, {}, {1}).slope));
}

TEST(Rates, NoisyData)
{
	std::mt19937 g(5);
	std::uniform_real_distribution<Real> U(-0.01, 0.01);
	std::vector<Real> h, v;
	for (int l = 0; l < 6; ++l)
	{
		h.push_back(std::pow(0.5, l));
		v.push_back(3 * std::pow(h.back(), 1.5) * (1 + U(g)));
	}
	EXPECT_NEAR(make_series("q", h, {}, v).slope, 1.5, 0.05);
}

TEST(Rates, NonPositiveValuesExcluded)
{
	const RateSeries s = make_series("q", {0.4, 0.2, 0.1, 0.05}, {}, {0.16, 0, 0.01, 0.0025});
	EXPECT_TRUE(s.has_excluded);
	EXPECT_TRUE(s.excluded[1]);
	EXPECT_TRUE(std::isnan(s.pairwise[0]));
	EXPECT_TRUE(std::isnan(s.pairwise[1]));
	EXPECT_NEAR(s.pairwise[2], 2, 1e-12);
	EXPECT_NEAR(s.slope, 2, 1e-12);
}

TEST(Rates, NonMonotoneMeshSizes)
{
	EXPECT_THROW(make_series("q", {0.4, 0.2, 0.3}, {}, {1, 2, 3}), InvalidArgument);
	EXPECT_THROW(make_series("q", {0.4, 0.4}, {}, {1, 2}), InvalidArgument);
}

TEST(RateTable, CsvRoundTrip)
{
	RateTable t;
	t.series.push_back(make_series("a", {0.5, 0.25}, {0.1, 0.05}, {1.0 / 3, 1.0 / 12}));
	t.series.push_back(make_series("b", {0.5, 0.25}, {0.1, 0.05}, {std::exp(1.0), 0}));
	const std::string text = table_csv(t);
	std::istringstream in(text);
	const RateTable r = RateTable::read_csv(in);
	ASSERT_EQ(r.series.size(), 2u);
	EXPECT_EQ(r.get("a").value, t.get("a").value);
	EXPECT_EQ(r.get("b").h, t.get("b").h);
	EXPECT_EQ(r.get("b").tau, t.get("b").tau);
	EXPECT_EQ(r.get("a").slope, t.get("a").slope);
	EXPECT_EQ(table_csv(r), text);
	EXPECT_FALSE(r.has("c"));
	std::istringstream bad("quantity,h,value\n");
	EXPECT_THROW(RateTable::read_csv(bad), ParseError);
}

TEST(Output, VtkHasEveryVertex)
{
	const auto dir = scratch("vtk");
	const Mesh m = generate_polygonal_disc_mesh(6, 2);
	write_vtk(m, {{"u", Vector::LinSpaced(m.n_vertices(), 0, 1)}}, dir / "u.vtk");
	std::ifstream in(dir / "u.vtk");
	std::string line;
	int points = -1, cells = -1, scalars = 0;
	while (std::getline(in, line))
	{
		std::istringstream ls(line);
		std::string key;
		ls >> key;
		if (key == "POINTS")
			ls >> points;
		else if (key == "CELLS")
			ls >> cells;
		else if (key == "SCALARS")
			++scalars;
	}
	EXPECT_EQ(points, m.n_vertices());
	EXPECT_EQ(cells, m.n_triangles());
	EXPECT_EQ(scalars, 1);
	EXPECT_THROW(write_vtk(m, {{"u", Vector::Zero(3)}}, dir / "bad.vtk"), InvalidArgument);
	std::filesystem::remove_all(dir);
}

TEST(Experiments, MeshJitterIsReproducible)
{
	ExperimentConfig c = small_rotation();
	MeshHierarchy h = make_hierarchy(c.mesh);
	const LevelMesh a = experiment_mesh(c, h, 2), b = experiment_mesh(c, h, 2);
	EXPECT_EQ(a.mesh->vertices(), b.mesh->vertices());
	EXPECT_EQ(a.h, mesh_statistics(*h.level(2)).h_min);
	c.seed += 1;
	EXPECT_NE(experiment_mesh(c, h, 2).mesh->vertices(), a.mesh->vertices());
	for (int v = 0; v < a.mesh->n_vertices(); ++v)
		if (a.mesh->is_boundary_vertex(v))
			EXPECT_EQ(a.mesh->vertex(v), h.level(2)->vertex(v));
}

TEST(Experiments, TimeStepDividesFinalTime)
{
	ExperimentConfig c;
	c.T = 1;
	c.tau_rule = TauRule::tau_equals_h_over_c;
	c.tau_c = 3;
	const Real tau = time_step(c, 0.1);
	EXPECT_NEAR(c.T / tau, std::round(c.T / tau), 1e-12);
	EXPECT_NEAR(tau, 1.0 / 30, 1e-15);
}

TEST(Experiments, SameSeedSameBytes)
{
	const ExperimentConfig c = small_rotation();
	const std::string a = table_csv(run_rotating_gaussian(c).table);
	const std::string b = table_csv(run_rotating_gaussian(c).table);
	EXPECT_EQ(a, b);
	ExperimentConfig d = c;
	d.seed = 7;
	EXPECT_NE(table_csv(run_rotating_gaussian(d).table), a);
}

TEST(Experiments, InitialProjectionIsSecondOrder)
{
	ExperimentConfig c = preset("figure1");
	c.T = 0;
	c.levels = {2, 3, 4, 5};
	c.methods = {"cip_implicit"};
	const auto r = run_rotating_gaussian(c);
	EXPECT_NEAR(r.table.get("L2_final_cip_implicit").slope, 2, 0.15);
}

TEST(Experiments, RotatingGaussianExactSolution)
{
	const auto u = rotating_gaussian_exact({0.3, 0}, 0.15, 1e-6);
	EXPECT_NEAR(u(Vec2(0.3, 0), 0), 1, 1e-15);
	const Real quarter = std::numbers::pi / 2;
	EXPECT_NEAR(u(Vec2(0, 0.3), quarter), 0.0225 / (0.0225 + 2e-6 * quarter), 1e-12);
	const auto still = rotating_gaussian_exact({0.3, 0}, 0.15, 0);
	EXPECT_NEAR(still(Vec2(-0.3, 0), std::numbers::pi), 1, 1e-12);
}

TEST(Experiments, RotatingGaussianRequiresItsSetup)
{
	ExperimentConfig c = small_rotation();
	c.field = "shear";
	EXPECT_THROW(run_rotating_gaussian(c), InvalidArgument);
	c = small_rotation();
	c.u0 = InitialDatumSpec::parse("checkerboard(2)");
	EXPECT_THROW(run_rotating_gaussian(c), InvalidArgument);
}

TEST(Experiments, RoughDataOnSmallLevels)
{
	ExperimentConfig c = preset("rough_data");
	c.levels = {1, 2};
	c.reference_extra_levels = 1;
	c.T = 0.1;
	const RoughDataResult r = run_rough_data(c);
	ASSERT_EQ(r.levels.size(), 2u);
	EXPECT_EQ(r.reference_level, 3);
	for (const auto &l : r.levels)
		for (const auto &run : l.runs)
		{
			EXPECT_GT(run.measured, 0);
			EXPECT_EQ(run.report.measured_filtered_error, run.measured);
		}
	EXPECT_TRUE(r.table.has("filtered_error_galerkin"));
	EXPECT_TRUE(r.table.has("estimate_cip_implicit"));
	c.mesh.jitter = 0.1;
	EXPECT_THROW(run_rough_data(c), InvalidArgument);
}

TEST(Experiments, DropFineScaleOnSmallLevels)
{
	ExperimentConfig c = preset("drop_fine_scale");
	c.levels = {1, 2};
	c.reference_extra_levels = 1;
	c.T = 0.1;
	const DropFineScaleResult r = run_drop_beta_prime(c);
	ASSERT_EQ(r.levels.size(), 2u);
	for (const auto &l : r.levels)
	{
		EXPECT_NEAR(l.ratio, l.coarse_only / l.full, 1e-15);
		EXPECT_EQ(l.flagged, l.ratio < 0.5 || l.ratio > 2);
	}
	EXPECT_NEAR(r.fine_ratio, 1, 0.5);
}
