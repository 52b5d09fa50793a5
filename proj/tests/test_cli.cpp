#include "cipflow/harness.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace cipflow;
namespace fs = std::filesystem;

namespace
{
	fs::path work_dir()
	{
		static const fs::path dir = [] {
			const fs::path d = fs::temp_directory_path() / "cipflow_cli_test"
							   / ::testing::UnitTest::GetInstance()->current_test_info()->name();
			fs::remove_all(d);
			fs::create_directories(d);
			return d;
		}();
		return dir;
	}

	int run(const std::string &args)
	{
		const std::string cmd = std::string("\"") + CIPFLOW_CLI + "\" " + args + " > \""
								+ (work_dir() / "stdout.txt").string() + "\" 2>&1";
		const int status = std::system(cmd.c_str());
		return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
	}

	fs::path config(const std::string &name, const std::string &text)
	{
		const fs::path p = work_dir() / name;
		write_text_file(p, text);
		return p;
	}

	std::string read(const fs::path &p)
	{
		std::ifstream in(p);
		std::stringstream s;
		s << in.rdbuf();
		return s.str();
	}
} // namespace

TEST(Cli, HelpAndUsage)
{
	EXPECT_EQ(run("--help"), 0);
	EXPECT_EQ(run(""), 2);
	EXPECT_EQ(run("solve --frobnicate"), 2);
	EXPECT_EQ(run("--tau-f-reading min solve"), 2);
}

TEST(Cli, MeshRoundTrip)
{
	const fs::path m = work_dir() / "mesh" / "disc.txt";
	ASSERT_EQ(run("mesh --type disc --refine 2 --output \"" + m.string() + "\""), 0);
	EXPECT_EQ(read_mesh(m).n_triangles(), 96);
	EXPECT_EQ(run("mesh --input \"" + m.string() + "\""), 0);
	EXPECT_NE(read(work_dir() / "stdout.txt").find("triangles 96"), std::string::npos);
	EXPECT_EQ(run("mesh --input \"" + (work_dir() / "none.txt").string() + "\""), 2);
}

TEST(Cli, ConfigErrors)
{
	EXPECT_EQ(run("solve \"" + config("bad_number.ini", "[flow]\nmu = oops\n").string() + "\""), 2);
	EXPECT_NE(read(work_dir() / "stdout.txt").find("line 2"), std::string::npos);
	EXPECT_EQ(run("solve \"" + config("bad_key.ini", "[flow]\nspeed = 1\n").string() + "\""), 2);
	EXPECT_EQ(run("solve --mu -1"), 2);
	EXPECT_EQ(run("solve --preset nothing"), 2);
}

TEST(Cli, SolverFailure)
{
	const fs::path c = config("blow.ini", "[scheme]\nmethods = cip_explicit\ngamma = 1e200\n[mesh]\nlevels = 2\n");
	EXPECT_EQ(run("solve \"" + c.string() + "\" --out-dir \"" + (work_dir() / "blow").string() + "\""), 3);
}

TEST(Cli, SolveWritesOutputsAndConfig)
{
	const fs::path out = work_dir() / "solve";
	ASSERT_EQ(run("--seed 9 --out-dir \"" + out.string() + "\" solve --levels 1"), 0);
	EXPECT_TRUE(fs::exists(out / "solve_cip_implicit_L1.csv"));
	EXPECT_TRUE(fs::exists(out / "solve_cip_implicit_L1.vtk"));
	const ExperimentConfig c = load_experiment(out / "config.txt");
	EXPECT_EQ(c.seed, 9u);
	EXPECT_EQ(c.levels, std::vector<int>{1});
}

TEST(Cli, ConvergenceIsReproducible)
{
	const fs::path a = work_dir() / "conv_a", b = work_dir() / "conv_b";
	ASSERT_EQ(run("convergence --levels 1,2 --out-dir \"" + a.string() + "\""), 0);
	ASSERT_EQ(run("convergence --levels 1,2 --out-dir \"" + b.string() + "\""), 0);
	EXPECT_EQ(read(a / "table.csv"), read(b / "table.csv"));
	EXPECT_FALSE(read(a / "rates.csv").empty());
}

TEST(Cli, OtherSubcommands)
{
	const std::string out = " --out-dir \"" + (work_dir() / "misc").string() + "\"";
	EXPECT_EQ(run("filter --levels 1" + out), 0);
	EXPECT_EQ(run("estimate --levels 1" + out), 0);
	EXPECT_TRUE(fs::exists(work_dir() / "misc" / "estimate.csv"));
	EXPECT_EQ(run("--tau-f-reading tilde estimate --levels 1" + out), 0);
	EXPECT_EQ(run("dual-check --levels 1,2" + out), 0);
	EXPECT_EQ(run("dual-check --mode b --levels 1,2,3" + out), 0);
	const std::string small = config("small_rough.ini", "[mesh]\nlevels = 1, 2\n[time]\nT = 0.1\n"
														 "[reference]\nextra_levels = 1\n")
								  .string();
	EXPECT_EQ(run("rough-data \"" + small + "\"" + out), 0);
	EXPECT_TRUE(fs::exists(work_dir() / "misc" / "rates.csv"));
	EXPECT_EQ(run("drop-fine-scale \"" + small + "\"" + out), 0);
	EXPECT_TRUE(fs::exists(work_dir() / "misc" / "drop_fine_scale.csv"));
}
