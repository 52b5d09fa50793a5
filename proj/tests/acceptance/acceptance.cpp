#include "cipflow/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

using namespace cipflow;

namespace
{
	constexpr Real pi = std::numbers::pi;

	struct Verdict
	{
		bool pass = false;
		std::string detail;
	};

	std::string num(Real v, int digits = 4)
	{
		char buf[64];
		std::snprintf(buf, sizeof buf, "%.*g", digits, v);
		return buf;
	}

	MeshPtr shared(Mesh m) { return std::make_shared<const Mesh>(std::move(m)); }

	Real sine(const Vec2 &x) { return std::sin(pi * x.x()) * std::sin(pi * x.y()); }

	Real slope_of(const std::vector<Real> &h, const std::vector<Real> &v) { return make_series("q", h, {}, v).slope; }

	Verdict figure1()
	{
		const auto t0 = std::chrono::steady_clock::now();
		const auto r = run_rotating_gaussian(preset("figure1"));
		const Real secs = std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0).count();
		const Real gal = r.table.get("L2_final_galerkin").slope;
		const Real imp = r.table.get("L2_final_cip_implicit").slope;
		const Real exp = r.table.get("L2_final_cip_explicit").slope;
		const bool ok = imp >= 1.8 && exp >= 1.8 && gal <= std::min(imp, exp) - 0.3 && secs < 300;
		return {ok, "L2 slopes cip_implicit " + num(imp) + ", cip_explicit " + num(exp) + ", galerkin " + num(gal)
						+ " (need cip >= 1.8, galerkin <= cip - 0.3), " + num(secs, 3) + " s"};
	}

	Verdict smooth_rate()
	{
		const ExperimentConfig cfg = preset("smooth_rate");
		const auto r = run_rotating_gaussian(cfg);
		const Real s = r.table.get("Linf_L2_cip_implicit").slope;
		return {s >= 1.3 && s <= 1.9, "cip Linf(L2) slope " + num(s) + " (need [1.3, 1.9])"};
	}

	Verdict filter_exactness()
	{
		const FilterConfig cfg{0.01};
		const Real damping = 1 / (1 + 2 * pi * pi * cfg.h_frak);
		std::vector<Real> h, err;
		Real ratio_dev = 0;
		for (int n : {8, 16, 32, 64})
		{
			const MeshPtr m = shared(generate_unit_square_mesh(n));
			const FeFunction e = l2_project(m, sine, true);
			const FeFunction t = helmholtz_filter(e, cfg);
			h.push_back(m->h_max());
			err.push_back(l2_error(t, [&](const Vec2 &x) { return damping * sine(x); }));
			if (n == 64)
			{
				int center = 0;
				for (int v = 0; v < m->n_vertices(); ++v)
					if ((m->vertex(v) - Vec2(0.5, 0.5)).norm() < (m->vertex(center) - Vec2(0.5, 0.5)).norm())
						center = v;
				ratio_dev = std::abs(t.coefficients[center] / e.coefficients[center] / damping - 1);
			}
		}
		const Real rate = slope_of(h, err);
		return {ratio_dev <= 0.01 && rate >= 1.8, "center ratio deviation " + num(ratio_dev) + " at n=64 (need <= 1%),"
													  + " filter error rate " + num(rate) + " (need >= 1.8)"};
	}

	Verdict norm_identity()
	{
		const FilterConfig cfg{0.01};
		const MeshPtr m = shared(generate_polygonal_disc_mesh(6, 4));
		std::mt19937_64 g(2024);
		std::uniform_real_distribution<Real> U(-1, 1);
		Real worst = 0;
		for (int k = 0; k < 20; ++k)
		{
			Vector c(m->n_vertices());
			for (auto &v : c)
				v = U(g);
			const FeFunction e(m, c);
			worst = std::max(worst, filtered_norm(helmholtz_filter(e, cfg), e, cfg).identity_residual);
		}
		return {worst <= 1e-10, "max relative residual " + num(worst) + " over 20 fields (need <= 1e-10)"};
	}

	Verdict discrete_duality()
	{
		const std::vector<std::string> methods{"galerkin", "cip",		  "cip_implicit", "cip_explicit",
											   "cip_coarse", "galerkin_be", "cip_be"};
		Real worst = 0;
		int count = 0;
		for (const auto &name : preset_names())
			for (const char *f : {"zero", "constant(1)"})
				for (const auto &method : methods)
				{
					ExperimentConfig cfg = preset(name);
					cfg.f = f;
					MeshHierarchy hierarchy = make_hierarchy(cfg.mesh);
					const LevelMesh lm = experiment_mesh(cfg, hierarchy, 2);
					const Real tau = time_step(cfg, lm.h);
					cfg.T = 4 * tau;
					const MethodSpec spec = MethodSpec::parse(method);
					TimeSteppingOptions opts;
					opts.tau = tau;
					opts.integrator = spec.integrator;
					const auto c = discrete_duality_check(make_setup(cfg, lm.mesh, spec), opts,
														  PsiSource::filtered_error, {cfg.h_frak});
					worst = std::max(worst, c.rel_gap);
					++count;
				}
		return {worst <= 1e-10, "max rel_gap " + num(worst) + " over " + std::to_string(count)
									+ " preset/method/source setups (need <= 1e-10)"};
	}

	struct RoughSuite
	{
		RoughDataResult rough;
		DropFineScaleResult drop;
		Real seconds = 0;
	};

	const RoughSuite &rough_suite()
	{
		static const RoughSuite suite = [] {
			const auto t0 = std::chrono::steady_clock::now();
			const ExperimentConfig cfg = preset("rough_data");
			OverkillReference ref = compute_overkill_reference(cfg);
			RoughSuite s;
			s.rough = run_rough_data(cfg, &ref);
			s.drop = run_drop_beta_prime(preset("drop_fine_scale"), &ref);
			s.seconds = std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0).count();
			return s;
		}();
		return suite;
	}

	Verdict rough_rate()
	{
		const auto &s = rough_suite();
		const auto &series = s.rough.table.get("filtered_error_cip_implicit");
		std::string values;
		for (Real v : series.value)
			values += " " + num(v);
		const Real rate = series.slope;
		Real min_pe = std::numeric_limits<Real>::infinity();
		for (const auto &l : s.rough.levels)
			min_pe = std::min(min_pe, l.peclet_h);
		const bool ok = series.value.size() == 3 && rate >= 0.4 && rate <= 1.2 && !s.rough.peclet_warning
						&& s.seconds < 600;
		return {ok, "filtered errors" + values + ", rate " + num(rate) + " (need [0.4, 1.2]), min Pe_h " + num(min_pe)
						+ ", reference level " + std::to_string(s.rough.reference_level) + ", " + num(s.seconds, 3)
						+ " s"};
	}

	Verdict upper_bound()
	{
		const auto &s = rough_suite();
		int runs = 0, bounded = 0;
		Real worst_jump = 0, min_eff = std::numeric_limits<Real>::infinity();
		std::map<std::string, Real> previous;
		for (const auto &l : s.rough.levels)
			for (const auto &run : l.runs)
			{
				++runs;
				const Real eff = run.report.total_estimate / run.measured;
				min_eff = std::min(min_eff, eff);
				if (run.report.total_estimate >= run.measured)
					++bounded;
				if (previous.count(run.method))
				{
					const Real p = previous[run.method];
					worst_jump = std::max(worst_jump, std::max(eff / p, p / eff));
				}
				previous[run.method] = eff;
			}
		return {bounded == runs && worst_jump <= 10,
				std::to_string(bounded) + "/" + std::to_string(runs) + " runs bounded, min effectivity " + num(min_eff)
					+ ", largest level-to-level effectivity change " + num(worst_jump) + "x (need <= 10x)"};
	}

	Verdict dropped_fine_scale()
	{
		const auto &s = rough_suite();
		std::string ratios;
		bool ok = !s.drop.levels.empty();
		for (const auto &l : s.drop.levels)
		{
			ratios += " " + num(l.ratio);
			ok = ok && l.ratio >= 0.5 && l.ratio <= 2;
		}
		return {ok, "coarse-only/full ratios" + ratios + " (need within factor 2), sampled |beta'|^2/mu "
						+ num(s.drop.fine_ratio)};
	}

	Verdict stability()
	{
		Real worst = 0;
		std::string detail;
		for (Real mu : {1e-2, 1e-4, 1e-6, 1e-8})
		{
			ExperimentConfig cfg = preset("stability");
			cfg.mu = mu;
			MeshHierarchy hierarchy = make_hierarchy(cfg.mesh);
			for (int level : cfg.levels)
			{
				const LevelMesh lm = experiment_mesh(cfg, hierarchy, level);
				for (const auto &name : cfg.methods)
				{
					const MethodSpec spec = MethodSpec::parse(name);
					const ProblemSetup setup = make_setup(cfg, lm.mesh, spec);
					TimeSteppingOptions opts;
					opts.tau = time_step(cfg, lm.h);
					opts.integrator = spec.integrator;
					const Real r = stability_report(run_forward(setup, opts), setup).ratio;
					worst = std::max(worst, r);
					detail += " mu=" + num(mu, 1) + ":" + num(r);
				}
			}
		}
		return {worst <= 10, "ratios" + detail + " (need <= 10)"};
	}

	Verdict timescales()
	{
		const Real mu = 1e-6;
		const VelocityField rotation = fields::coarse_only("rot", fields::rigid_rotation());
		const VelocityField shear = fields::coarse_only("shear", fields::shear());
		const Real amp = 1.5;
		const VelocityField iso = fields::composite(
			"iso", fields::rigid_rotation(), {[&](const Vec2 &, Real) { return Vec2(amp * std::sqrt(mu), 0); }, {}});
		Real dev = 0;
		for (const Vec2 &x : {Vec2(0.1, 0.2), Vec2(-0.5, 0.3), Vec2(0.7, -0.1)})
		{
			dev = std::max(dev, std::abs(sigma_p(lambda_matrix(rotation, x, 0, mu))));
			dev = std::max(dev, std::abs(sigma_p(lambda_matrix(shear, x, 0, mu)) - 0.5));
			dev = std::max(dev, std::abs(sigma_p(lambda_matrix(iso, x, 0, mu)) - 0.5 * amp * amp));
		}

		const Mesh mesh = generate_polygonal_disc_mesh(6, 3);
		const auto times = SamplingPlan::uniform_times(1, 3);
		const auto plan = SamplingPlan::on_mesh(mesh, times);
		bool within = true;
		std::string readings;
		for (const char *spec : {"rigid_rotation", "shear", "zero", "oscillatory_fine(sqrt_mu, 8)",
								 "cellular_fine(sqrt_mu, 8)", "composite(rigid_rotation, oscillatory_fine(sqrt_mu, 4))",
								 "composite(shear, cellular_fine(sqrt_mu, 8))", "multiscale(8)"})
		{
			const VelocityField f = fields::parse(spec, mu);
			const FlowTimescales t = compute_tau_F(f, mu, plan);
			const Real tilde = compute_tilde_tau_F(f, mu, mesh, times);
			within = within && t.tau_F_max <= 3 * tilde;
			readings += std::string(" ") + spec + ":" + num(t.tau_F_literal) + "/" + num(t.tau_F_max) + "/" + num(tilde);
		}
		return {dev <= 1e-8 && within, "sigma_p max deviation " + num(dev) + " (need <= 1e-8); tau_F literal/max/tilde"
										   + readings + (within ? "" : " max reading exceeds 3x tilde")};
	}

	Verdict properties()
	{
		std::vector<std::string> failed;
		std::string detail;
		const VelocityField rotation = fields::coarse_only("rot", fields::rigid_rotation());

		// Skew-symmetry: exact on the constrained space, relative defect O(h) on the full space. The stream
		// function (1 - |x|^2)(1 + x/2) gives a field tangent to the circle with flux through the chords.
		const VelocityField stream = fields::coarse_only("stream", {[](const Vec2 &x, Real) {
			const Real b = 1 + x.x() / 2, q = 1 - x.squaredNorm();
			return Vec2(-2 * x.y() * b, 2 * x.x() * b - q / 2);
		}, {}});
		std::vector<Real> h, defect;
		Real constrained = 0;
		for (int r = 2; r <= 5; ++r)
		{
			const Mesh m = generate_polygonal_disc_mesh(6, r);
			const SparseMatrix C = assemble_convection(m, stream, 0);
			const SparseMatrix S = C + SparseMatrix(C.transpose());
			const SparseMatrix R = assemble_convection(m, rotation, 0);
			constrained = std::max(constrained, DofMap(m).restrict(SparseMatrix(R + SparseMatrix(R.transpose()))).norm()
													/ R.norm());
			Real smax = 0, cmax = 0;
			for (int k = 0; k < S.outerSize(); ++k)
				for (SparseMatrix::InnerIterator it(S, k); it; ++it)
					smax = std::max(smax, std::abs(it.value()));
			for (int k = 0; k < C.outerSize(); ++k)
				for (SparseMatrix::InnerIterator it(C, k); it; ++it)
					cmax = std::max(cmax, std::abs(it.value()));
			h.push_back(m.h_max());
			defect.push_back(smax / cmax);
		}
		const RateSeries skew = make_series("skew", h, {}, defect);
		Real min_pair = std::numeric_limits<Real>::infinity();
		for (Real p : skew.pairwise)
			min_pair = std::min(min_pair, p);
		if (constrained > 1e-13 || min_pair < 0.9)
			failed.push_back("skew");
		detail += "skew constrained " + num(constrained) + ", defect rate " + num(skew.slope) + " (min pairwise "
				  + num(min_pair) + ")";

		// CIP annihilates affine functions.
		const Mesh disc3 = generate_polygonal_disc_mesh(6, 3);
		const SparseMatrix S3 = assemble_cip(disc3, rotation, VelocityPart::full, 0, 0.3);
		Vector affine(disc3.n_vertices());
		for (int v = 0; v < disc3.n_vertices(); ++v)
			affine[v] = 1.5 - 2 * disc3.vertex(v).x() + 0.7 * disc3.vertex(v).y();
		const Real annihilation = (S3 * affine).norm() / (S3.norm() * affine.norm());
		if (annihilation > 1e-12)
			failed.push_back("affine");
		detail += "; cip on affine " + num(annihilation);

		// gamma = 0 is Galerkin at matrix level.
		ProblemSetup cip;
		cip.mesh = shared(generate_polygonal_disc_mesh(6, 3));
		cip.field = fields::multiscale(1e-6);
		cip.gamma = 0;
		ProblemSetup gal = cip;
		gal.method = Method::galerkin;
		gal.gamma = 0.01;
		Real diff = 0;
		for (auto integrator : {Integrator::cn_implicit_stab, Integrator::cn_explicit_stab, Integrator::backward_euler})
		{
			const auto a = SpaceOperators(cip).step_matrices(0, 0.1, 0.1, integrator);
			const auto b = SpaceOperators(gal).step_matrices(0, 0.1, 0.1, integrator);
			diff = std::max({diff, (a.first - b.first).norm(), (a.second - b.second).norm()});
		}
		if (diff != 0)
			failed.push_back("gamma0");
		detail += "; gamma=0 vs galerkin " + num(diff);

		// Piecewise-constant velocity: sup |beta - pi_0 beta| <= C h_K |grad beta|_inf.
		const VelocityField wavy = fields::coarse_only(
			"wavy", {[](const Vec2 &x, Real) { return Vec2(std::sin(2 * x.y()), std::cos(3 * x.x())); }, {}});
		Real pi0 = 0;
		for (int r = 1; r <= 4; ++r)
		{
			const Mesh m = generate_polygonal_disc_mesh(6, r);
			const auto pc = project_velocity_pw_constant(m, wavy, 0);
			Real grad = 0, worst = 0;
			for (int t = 0; t < m.n_triangles(); ++t)
			{
				const auto c = m.corners(t);
				std::vector<Vec2> pts(c.begin(), c.end());
				for (const auto &l : triangle_rule(5).points)
					pts.push_back(map_barycentric(l, c[0], c[1], c[2]));
				for (const auto &x : pts)
				{
					grad = std::max(grad, wavy.jacobian(x, 0, VelocityPart::full).operatorNorm());
					worst = std::max(worst, (wavy(x, 0) - pc[t]).norm() / m.diameter(t));
				}
			}
			pi0 = std::max(pi0, worst / grad);
		}
		if (!(pi0 < 5))
			failed.push_back("pi0");
		detail += "; pi_0 constant " + num(pi0);

		// Inverse constants on congruent meshes.
		const InverseConstants base = estimate_inverse_constants(generate_unit_square_mesh(2));
		Real spread = 0;
		for (int n : {4, 8})
		{
			const InverseConstants c = estimate_inverse_constants(generate_unit_square_mesh(n));
			spread = std::max({spread, std::abs(c.c_i - base.c_i) / base.c_i, std::abs(c.c_t - base.c_t) / base.c_t});
		}
		if (spread > 1e-10)
			failed.push_back("inverse");
		detail += "; inverse constant spread " + num(spread);

		std::string f;
		for (const auto &s : failed)
			f += " " + s;
		return {failed.empty(), detail + (failed.empty() ? "" : "; failed:" + f)};
	}

	struct Criterion
	{
		int id;
		const char *name;
		std::function<Verdict()> run;
	};
} // namespace

int main(int argc, char **argv)
{
	CLI::App app{"Acceptance criteria"};
	std::vector<int> only, known;
	std::string report;
	app.add_option("--only", only, "Criteria to run")->delimiter(',');
	app.add_option("--known-failures", known, "Criteria expected to fail; they do not change the exit code")
		->delimiter(',');
	app.add_option("--report", report, "Also write the verdict lines to this file");
	CLI11_PARSE(app, argc, argv);

	const std::vector<Criterion> criteria{
		{1, "figure1_rates", figure1},
		{2, "smooth_linf_l2_rate", smooth_rate},
		{3, "helmholtz_filter", filter_exactness},
		{4, "norm_identity", norm_identity},
		{5, "discrete_duality", discrete_duality},
		{6, "rough_data_rate", rough_rate},
		{7, "a_posteriori_upper_bound", upper_bound},
		{8, "dropped_fine_scale", dropped_fine_scale},
		{9, "stability_robustness", stability},
		{10, "timescales", timescales},
		{11, "property_suites", properties},
	};

	std::ostringstream lines;
	std::set<int> failed;
	for (const auto &c : criteria)
	{
		if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end())
			continue;
		Verdict v;
		try
		{
			v = c.run();
		}
		catch (const std::exception &e)
		{
			v = {false, std::string("error: ") + e.what()};
		}
		if (!v.pass)
			failed.insert(c.id);
		const std::string line = std::string(v.pass ? "PASS" : "FAIL") + " " + std::to_string(c.id) + " " + c.name
								 + ": " + v.detail;
		std::cout << line << std::endl;
		lines << line << "\n";
	}

	std::set<int> expected;
	for (int k : known)
		if (only.empty() || std::find(only.begin(), only.end(), k) != only.end())
			expected.insert(k);
	const bool as_expected = failed == expected;
	std::string summary = std::to_string(failed.size()) + " failing";
	if (!expected.empty())
		summary += as_expected ? ", matching the known failure list" : ", NOT matching the known failure list";
	std::cout << summary << std::endl;
	lines << summary << "\n";

	if (!report.empty())
	{
		std::ofstream out(report);
		out << lines.str();
	}
	return as_expected ? 0 : 1;
}
