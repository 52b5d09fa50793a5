#include "cipflow/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

using namespace cipflow;

namespace
{
	enum ExitCode
	{
		ok = 0,
		io_failure = 1,
		config_error = 2,
		solver_failure = 3
	};

	struct CommonOptions
	{
		std::string config;
		std::string preset_name;
		std::optional<std::uint64_t> seed;
		std::string out_dir;
		std::string tau_f_reading;
		std::optional<Real> mu;
		std::vector<int> levels;
	};

	ExperimentConfig resolve(const CommonOptions &o, const std::string &default_preset)
	{
		ExperimentConfig cfg = preset(o.preset_name.empty() ? default_preset : o.preset_name);
		if (!o.config.empty())
			cfg = load_experiment(o.config, cfg);
		if (o.seed)
		{
			cfg.seed = *o.seed;
			if (cfg.u0.kind == InitialDatumSpec::Kind::random_pw)
				cfg.u0.seed = *o.seed;
		}
		if (!o.out_dir.empty())
			cfg.out_dir = o.out_dir;
		if (!o.tau_f_reading.empty())
			cfg.tau_f_reading = parse_tau_f_reading(o.tau_f_reading);
		if (o.mu)
			cfg.mu = *o.mu;
		if (!o.levels.empty())
			cfg.levels = o.levels;
		cfg.validate();
		write_text_file(cfg.out_dir / "config.txt", cfg.to_text());
		return cfg;
	}

	std::string num(Real v)
	{
		char buf[32];
		std::snprintf(buf, sizeof buf, "%.6e", v);
		return buf;
	}

	void print_rates(const RateTable &table)
	{
		for (const auto &s : table.series)
		{
			std::cout << s.quantity << ": slope " << num(s.slope) << "  values";
			for (Real v : s.value)
				std::cout << ' ' << num(v);
			if (s.has_excluded)
				std::cout << "  (non-positive values excluded)";
			std::cout << '\n';
		}
	}

	void write_tables(const RateTable &table, const std::filesystem::path &dir)
	{
		std::ostringstream a, b;
		table.write_csv(a);
		table.write_rates_csv(b);
		write_text_file(dir / "table.csv", a.str());
		write_text_file(dir / "rates.csv", b.str());
	}

	int cmd_mesh(const std::string &type, int n, int n_boundary, int refine, const std::string &input,
				 const std::string &out, const std::string &vtk)
	{
		std::optional<Mesh> mesh;
		if (!input.empty())
			mesh.emplace(read_mesh(input));
		else if (type == "square")
			mesh.emplace(generate_unit_square_mesh(n));
		else if (type == "disc")
			mesh.emplace(generate_polygonal_disc_mesh(n_boundary, refine));
		else
			throw InvalidArgument("unknown mesh type '" + type + "'");
		const MeshStatistics s = mesh_statistics(*mesh);
		std::cout << "vertices " << s.n_vertices << "\nedges " << s.n_edges << "\ntriangles " << s.n_triangles
				  << "\ninterior_faces " << s.n_interior_faces << "\nh_max " << num(s.h_max) << "\nh_min "
				  << num(s.h_min) << "\nratio " << num(s.ratio) << "\neuler "
				  << s.n_vertices - s.n_edges + s.n_triangles << '\n';
		if (!out.empty())
			write_mesh(*mesh, out);
		if (!vtk.empty())
			write_vtk(*mesh, {}, vtk);
		return ok;
	}

	int cmd_solve(const ExperimentConfig &cfg)
	{
		MeshHierarchy hierarchy = make_hierarchy(cfg.mesh);
		for (int level : cfg.levels)
		{
			const LevelMesh lm = experiment_mesh(cfg, hierarchy, level);
			const Real tau = time_step(cfg, lm.h);
			for (const auto &name : cfg.methods)
			{
				const MethodSpec m = MethodSpec::parse(name);
				const ProblemSetup setup = make_setup(cfg, lm.mesh, m);
				TimeSteppingOptions options;
				options.tau = tau;
				options.integrator = m.integrator;
				options.snapshot_stride = step_count(cfg.T, tau);
				const TrajectoryRecord traj = run_forward(setup, options);
				const StabilityReport r = stability_report(traj, setup);
				const std::string stem = "solve_" + m.name + "_L" + std::to_string(level);
				write_trajectory_csv(traj, cfg.out_dir / (stem + ".csv"));
				write_vtk(traj, cfg.out_dir / (stem + ".vtk"));
				std::cout << "level " << level << " method " << m.name << " h " << num(lm.h) << " tau " << num(tau)
						  << " sup_L2 " << num(r.sup_L2) << " triple " << num(r.triple_norm) << " bound_rhs "
						  << num(r.bound_rhs) << " ratio " << num(r.ratio) << '\n';
			}
		}
		return ok;
	}

	int cmd_filter(const ExperimentConfig &cfg)
	{
		MeshHierarchy hierarchy = make_hierarchy(cfg.mesh);
		const LevelMesh lm = experiment_mesh(cfg, hierarchy, cfg.levels.back());
		const ScalarFunction u0 = cfg.u0.make();
		const FeFunction e = u0 ? l2_project(lm.mesh, u0) : FeFunction::zero(lm.mesh, false);
		FilterConfig fc;
		fc.h_frak = cfg.h_frak;
		const FeFunction et = helmholtz_filter(e, fc);
		const FilteredNorm n = filtered_norm(et, e, fc);
		std::cout << "h_frak " << num(cfg.h_frak) << "\nwidth " << num(fc.width()) << "\nnorm_h " << num(n.norm_h)
				  << "\nidentity_residual " << num(n.identity_residual) << "\nl2_e "
				  << num(std::sqrt(quadratic_form(assemble_mass(*lm.mesh), e.coefficients))) << "\nl2_e_tilde "
				  << num(std::sqrt(quadratic_form(assemble_mass(*lm.mesh), et.coefficients))) << '\n';
		write_vtk(*lm.mesh, {{"e", e.coefficients}, {"e_tilde", et.coefficients}}, cfg.out_dir / "filter.vtk");
		return ok;
	}

	int cmd_estimate(const ExperimentConfig &cfg)
	{
		MeshHierarchy hierarchy = make_hierarchy(cfg.mesh);
		FilterConfig fc;
		fc.h_frak = cfg.h_frak;
		std::string csv = "level,method," + ErrorReport::csv_header() + "\n";
		for (int level : cfg.levels)
		{
			const LevelMesh lm = experiment_mesh(cfg, hierarchy, level);
			const Real tau = time_step(cfg, lm.h);
			for (const auto &name : cfg.methods)
			{
				const MethodSpec m = MethodSpec::parse(name);
				const ProblemSetup setup = make_setup(cfg, lm.mesh, m);
				TimeSteppingOptions options;
				options.tau = tau;
				options.integrator = m.integrator;
				const ErrorReport report = a_posteriori_estimate(run_forward(setup, options), setup, fc, cfg.tau_f_reading);
				std::cout << "# level " << level << " method " << m.name << '\n' << report.to_key_value() << '\n';
				csv += std::to_string(level) + "," + m.name + "," + report.to_csv_row() + "\n";
			}
		}
		write_text_file(cfg.out_dir / "estimate.csv", csv);
		return ok;
	}

	int cmd_dual_check(const ExperimentConfig &cfg, const std::string &mode)
	{
		FilterConfig fc;
		fc.h_frak = cfg.h_frak;
		std::string csv = "mode,level,method,lhs,rhs,rel_gap\n";
		auto row = [&](const std::string &level, const std::string &method, const RepresentationCheck &c) {
			std::cout << "mode " << mode << " level " << level << " method " << method << " lhs " << num(c.lhs)
					  << " rhs " << num(c.rhs) << " rel_gap " << num(c.rel_gap) << '\n';
			char buf[128];
			std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", c.lhs, c.rhs, c.rel_gap);
			csv += mode + "," + level + "," + method + "," + buf + "\n";
		};
		MeshHierarchy hierarchy = make_hierarchy(cfg.mesh);
		if (mode == "a")
		{
			for (int level : cfg.levels)
			{
				const LevelMesh lm = experiment_mesh(cfg, hierarchy, level);
				for (const auto &name : cfg.methods)
				{
					const MethodSpec m = MethodSpec::parse(name);
					TimeSteppingOptions options;
					options.tau = time_step(cfg, lm.h);
					options.integrator = m.integrator;
					row(std::to_string(level), m.name,
						discrete_duality_check(make_setup(cfg, lm.mesh, m), options, PsiSource::filtered_error, fc));
				}
			}
		}
		else if (mode == "b")
		{
			if (cfg.mesh.jitter != 0 || cfg.levels.size() < 2)
				throw InvalidArgument("dual-check mode b needs nested meshes and at least two levels");
			const int coarse = cfg.levels.front(), reference = cfg.levels.back();
			const int dual = cfg.levels[cfg.levels.size() / 2];
			const Real tau = time_step(cfg, hierarchy.level(reference)->h_min());
			const MethodSpec m = MethodSpec::parse(cfg.methods.front());
			const RepresentationStudy st = run_error_representation(make_setup(cfg, hierarchy.level(coarse), m),
																	hierarchy, tau, coarse, dual, reference,
																	PsiSource::filtered_error, fc);
			row(std::to_string(coarse) + "/" + std::to_string(dual) + "/" + std::to_string(reference), m.name, st.check);
		}
		else
			throw InvalidArgument("unknown dual-check mode '" + mode + "'");
		write_text_file(cfg.out_dir / "dual_check.csv", csv);
		return ok;
	}

	int cmd_convergence(const ExperimentConfig &cfg)
	{
		const RotatingGaussianResult r = run_rotating_gaussian(cfg);
		print_rates(r.table);
		write_tables(r.table, cfg.out_dir);
		return ok;
	}

	int cmd_rough_data(const ExperimentConfig &cfg)
	{
		const RoughDataResult r = run_rough_data(cfg);
		if (r.peclet_warning)
			std::cerr << "warning: mesh Peclet number <= 1 on some level\n";
		std::map<std::string, std::string> reports;
		for (const auto &level : r.levels)
		{
			std::cout << "level " << level.level << " h " << num(level.h) << " tau " << num(level.tau) << " Pe_h "
					  << num(level.peclet_h) << (level.low_peclet ? " (low)" : "") << '\n';
			for (const auto &run : level.runs)
			{
				std::cout << "  " << run.method << " filtered_error " << num(run.measured) << " estimate "
						  << num(run.report.total_estimate) << " effectivity " << num(run.report.effectivity.value_or(0))
						  << '\n';
				auto &csv = reports[run.method];
				if (csv.empty())
					csv = "level," + ErrorReport::csv_header() + "\n";
				csv += std::to_string(level.level) + "," + run.report.to_csv_row() + "\n";
			}
		}
		print_rates(r.table);
		write_tables(r.table, cfg.out_dir);
		for (const auto &[method, csv] : reports)
			write_text_file(cfg.out_dir / ("error_reports_" + method + ".csv"), csv);
		return ok;
	}

	int cmd_drop_fine_scale(const ExperimentConfig &cfg)
	{
		const DropFineScaleResult r = run_drop_beta_prime(cfg);
		std::string csv = "level,h,full,coarse_only,ratio,flagged\n";
		for (const auto &l : r.levels)
		{
			std::cout << "level " << l.level << " h " << num(l.h) << " full " << num(l.full) << " coarse_only "
					  << num(l.coarse_only) << " ratio " << num(l.ratio) << (l.flagged ? " FLAGGED" : "") << '\n';
			char buf[160];
			std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%d\n", l.level, l.h, l.full, l.coarse_only,
						  l.ratio, l.flagged ? 1 : 0);
			csv += buf;
		}
		std::cout << "fine_ratio " << num(r.fine_ratio) << '\n';
		if (r.any_flagged)
			std::cerr << "warning: coarse-only error differs from the full-field error by more than a factor 2\n";
		print_rates(r.table);
		write_tables(r.table, cfg.out_dir);
		write_text_file(cfg.out_dir / "drop_fine_scale.csv", csv);
		return ok;
	}

	void add_common(CLI::App *cmd, CommonOptions &o)
	{
		cmd->add_option("config", o.config, "Experiment config file")->check(CLI::ExistingFile);
		cmd->add_option("--preset", o.preset_name, "Built-in recipe used as the base config");
		cmd->add_option("--mu", o.mu, "Override the diffusion coefficient");
		cmd->add_option("--levels", o.levels, "Override the refinement levels")->delimiter(',');
	}
} // namespace

int main(int argc, char **argv)
{
	CLI::App app{"cipflow: stabilized P1 finite elements for transient convection-diffusion"};
	app.require_subcommand(1);
	app.fallthrough();

	CommonOptions common;
	app.add_option("--seed", common.seed, "Seed for jitter and random data");
	app.add_option("--out-dir", common.out_dir, "Output directory");
	app.add_option("--tau-f-reading", common.tau_f_reading, "Flow timescale reading")
		->check(CLI::IsMember({"literal", "max", "tilde"}));

	std::string mesh_type = "disc", mesh_in, mesh_out, mesh_vtk;
	int mesh_n = 4, mesh_nb = 6, mesh_refine = 0;
	auto *mesh_cmd = app.add_subcommand("mesh", "Generate or inspect a mesh");
	mesh_cmd->add_option("--type", mesh_type, "disc or square")->check(CLI::IsMember({"disc", "square"}));
	mesh_cmd->add_option("--n", mesh_n, "Cells per side of the square");
	mesh_cmd->add_option("--n-boundary", mesh_nb, "Boundary vertices of the disc polygon");
	mesh_cmd->add_option("--refine", mesh_refine, "Uniform refinements of the disc");
	mesh_cmd->add_option("--input", mesh_in, "Read a mesh file instead")->check(CLI::ExistingFile);
	mesh_cmd->add_option("--output", mesh_out, "Write the mesh file");
	mesh_cmd->add_option("--vtk", mesh_vtk, "Write the mesh as VTK");

	struct Sub
	{
		const char *name;
		const char *help;
		const char *preset;
	};
	const Sub subs[] = {
		{"solve", "Forward solves on every level and method", "stability"},
		{"filter", "Helmholtz filter of the projected initial datum", "rough_data"},
		{"estimate", "A posteriori estimator on every level and method", "rough_data"},
		{"dual-check", "Error representation check", "stability"},
		{"convergence", "Rotating Gaussian convergence study", "figure1"},
		{"rough-data", "Filtered error and estimator for rough data", "rough_data"},
		{"drop-fine-scale", "Full field against the coarse field only", "drop_fine_scale"},
	};
	std::string dual_mode = "a";
	std::map<std::string, CLI::App *> cmds;
	for (const auto &s : subs)
	{
		auto *cmd = app.add_subcommand(s.name, s.help);
		add_common(cmd, common);
		cmds[s.name] = cmd;
	}
	cmds["dual-check"]->add_option("--mode", dual_mode, "a: discrete duality, b: reference-mesh representation")
		->check(CLI::IsMember({"a", "b"}));

	try
	{
		app.parse(argc, argv);
	}
	catch (const CLI::ParseError &e)
	{
		const int code = app.exit(e);
		return code == 0 ? ok : config_error;
	}

	try
	{
		if (*mesh_cmd)
			return cmd_mesh(mesh_type, mesh_n, mesh_nb, mesh_refine, mesh_in, mesh_out, mesh_vtk);
		for (const auto &s : subs)
		{
			if (!*cmds[s.name])
				continue;
			const ExperimentConfig cfg = resolve(common, s.preset);
			const std::string name = s.name;
			if (name == "solve")
				return cmd_solve(cfg);
			if (name == "filter")
				return cmd_filter(cfg);
			if (name == "estimate")
				return cmd_estimate(cfg);
			if (name == "dual-check")
				return cmd_dual_check(cfg, dual_mode);
			if (name == "convergence")
				return cmd_convergence(cfg);
			if (name == "rough-data")
				return cmd_rough_data(cfg);
			return cmd_drop_fine_scale(cfg);
		}
	}
	catch (const ParseError &e)
	{
		std::cerr << "config error: " << e.what() << '\n';
		return config_error;
	}
	catch (const InvalidArgument &e)
	{
		std::cerr << "config error: " << e.what() << '\n';
		return config_error;
	}
	catch (const InvalidMesh &e)
	{
		std::cerr << "config error: " << e.what() << '\n';
		return config_error;
	}
	catch (const SolverError &e)
	{
		std::cerr << "solver failure: " << e.what() << '\n';
		return solver_failure;
	}
	catch (const std::exception &e)
	{
		std::cerr << "error: " << e.what() << '\n';
		return io_failure;
	}
	return ok;
}
