#include "cipflow/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <regex>
#include <sstream>

namespace cipflow
{
	namespace
	{
		std::string trim(const std::string &s)
		{
			const auto b = s.find_first_not_of(" \t\r");
			const auto e = s.find_last_not_of(" \t\r");
			return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
		}

		std::vector<std::string> split(const std::string &s, char sep)
		{
			std::vector<std::string> out;
			std::string cur;
			int depth = 0;
			for (char c : s)
			{
				depth += (c == '(') - (c == ')');
				if (c == sep && depth == 0)
				{
					out.push_back(trim(cur));
					cur.clear();
				}
				else
					cur += c;
			}
			if (!trim(cur).empty() || !out.empty())
				out.push_back(trim(cur));
			return out;
		}

		std::string fmt(Real v)
		{
			char buf[40];
			std::snprintf(buf, sizeof buf, "%.17g", v);
			return buf;
		}

		Real parse_plain(const std::string &s)
		{
			std::size_t used = 0;
			Real v = 0;
			try
			{
				v = std::stod(s, &used);
			}
			catch (const std::exception &)
			{
				throw InvalidArgument("bad number '" + s + "'");
			}
			if (used != s.size())
				throw InvalidArgument("bad number '" + s + "'");
			return v;
		}

		// Plain numbers or multiples of pi such as `2pi`, `pi/2`, `0.5*pi`.
		Real parse_real(const std::string &text)
		{
			const std::string s = trim(text);
			static const std::regex pi_form(R"(^([-+]?[0-9.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([0-9.eE+-]+))?$)");
			std::smatch m;
			if (std::regex_match(s, m, pi_form))
			{
				Real v = std::numbers::pi;
				const std::string a = m[1].str();
				if (a == "-")
					v = -v;
				else if (!a.empty() && a != "+")
					v *= parse_plain(a);
				if (m[2].matched)
					v /= parse_plain(m[2].str());
				return v;
			}
			return parse_plain(s);
		}

		long long parse_integer(const std::string &text)
		{
			const std::string s = trim(text);
			std::size_t used = 0;
			long long v = 0;
			try
			{
				v = std::stoll(s, &used);
			}
			catch (const std::exception &)
			{
				throw InvalidArgument("bad integer '" + s + "'");
			}
			if (used != s.size())
				throw InvalidArgument("bad integer '" + s + "'");
			return v;
		}

		std::vector<int> parse_levels(const std::string &text)
		{
			std::vector<int> out;
			for (const auto &part : split(text, ','))
			{
				const auto dots = part.find("..");
				if (dots == std::string::npos)
				{
					out.push_back(static_cast<int>(parse_integer(part)));
					continue;
				}
				const int a = static_cast<int>(parse_integer(part.substr(0, dots)));
				const int b = static_cast<int>(parse_integer(part.substr(dots + 2)));
				if (b < a)
					throw InvalidArgument("bad level range '" + part + "'");
				for (int l = a; l <= b; ++l)
					out.push_back(l);
			}
			return out;
		}

		struct Call
		{
			std::string name;
			std::vector<std::string> args;
		};

		Call parse_call(const std::string &text)
		{
			const std::string s = trim(text);
			const auto open = s.find('(');
			if (open == std::string::npos)
				return {s, {}};
			if (s.back() != ')')
				throw InvalidArgument("unbalanced parentheses in '" + s + "'");
			Call c{trim(s.substr(0, open)), split(s.substr(open + 1, s.size() - open - 2), ',')};
			if (c.args.size() == 1 && c.args[0].empty())
				c.args.clear();
			return c;
		}

		// Uniform double in [0,1) from the top 53 bits; identical on every platform.
		Real unit_uniform(std::mt19937_64 &g) { return static_cast<Real>(g() >> 11) * 0x1.0p-53; }

		SpaceTimeFunction make_source(const std::string &spec)
		{
			const Call c = parse_call(spec);
			if (c.name == "zero" && c.args.empty())
				return {};
			if (c.name == "constant" && c.args.size() == 1)
			{
				const Real v = parse_real(c.args[0]);
				return [v](const Vec2 &, Real) { return v; };
			}
			throw InvalidArgument("unknown source '" + spec + "'");
		}
	} // namespace

	std::string to_string(TauRule rule)
	{
		switch (rule)
		{
		case TauRule::fixed:
			return "fixed";
		case TauRule::tau_equals_h:
			return "tau_equals_h";
		default:
			return "tau_equals_h_over_c";
		}
	}

	ScalarFunction InitialDatumSpec::make() const
	{
		switch (kind)
		{
		case Kind::zero:
			return {};
		case Kind::gaussian:
		{
			const Vec2 c = x0;
			const Real s2 = sigma * sigma;
			return [c, s2](const Vec2 &x) { return std::exp(-(x - c).squaredNorm() / (2 * s2)); };
		}
		case Kind::checkerboard:
		{
			const Real w = k * std::numbers::pi;
			return [w](const Vec2 &x) { return std::sin(w * x.x()) * std::sin(w * x.y()) >= 0 ? 1.0 : -1.0; };
		}
		default:
		{
			std::mt19937_64 g(seed);
			std::vector<Real> values(static_cast<std::size_t>(cells) * cells);
			for (auto &v : values)
				v = 2 * unit_uniform(g) - 1;
			const int n = cells;
			return [values, n](const Vec2 &x) {
				auto cell = [n](Real s) { return std::clamp(static_cast<int>(std::floor((s + 1) / 2 * n)), 0, n - 1); };
				return values[cell(x.y()) * n + cell(x.x())];
			};
		}
		}
	}

	std::string InitialDatumSpec::to_string() const
	{
		switch (kind)
		{
		case Kind::zero:
			return "zero";
		case Kind::gaussian:
			return "gaussian(" + fmt(x0.x()) + ", " + fmt(x0.y()) + ", " + fmt(sigma) + ")";
		case Kind::checkerboard:
			return "checkerboard(" + std::to_string(k) + ")";
		default:
			return "random_pw(" + std::to_string(seed) + ", " + std::to_string(cells) + ")";
		}
	}

	InitialDatumSpec InitialDatumSpec::parse(const std::string &spec)
	{
		const Call c = parse_call(spec);
		InitialDatumSpec s;
		if (c.name == "zero" && c.args.empty())
		{
			s.kind = Kind::zero;
			return s;
		}
		if (c.name == "gaussian" && (c.args.empty() || c.args.size() == 3))
		{
			s.kind = Kind::gaussian;
			if (!c.args.empty())
			{
				s.x0 = Vec2(parse_real(c.args[0]), parse_real(c.args[1]));
				s.sigma = parse_real(c.args[2]);
			}
			if (!(s.sigma > 0))
				throw InvalidArgument("gaussian width must be positive");
			return s;
		}
		if (c.name == "checkerboard" && c.args.size() == 1)
		{
			s.kind = Kind::checkerboard;
			s.k = static_cast<int>(parse_integer(c.args[0]));
			if (s.k < 1)
				throw InvalidArgument("checkerboard frequency must be positive");
			return s;
		}
		if (c.name == "random_pw" && (c.args.size() == 1 || c.args.size() == 2))
		{
			s.kind = Kind::random_pw;
			const long long seed = parse_integer(c.args[0]);
			if (seed < 0)
				throw InvalidArgument("random_pw seed must be non-negative");
			s.seed = static_cast<std::uint64_t>(seed);
			if (c.args.size() == 2)
				s.cells = static_cast<int>(parse_integer(c.args[1]));
			if (s.cells < 1)
				throw InvalidArgument("random_pw cell count must be positive");
			return s;
		}
		throw InvalidArgument("unknown initial datum '" + spec + "'");
	}

	MethodSpec MethodSpec::parse(const std::string &name)
	{
		MethodSpec m;
		m.name = trim(name);
		if (m.name == "galerkin")
			m.method = Method::galerkin;
		else if (m.name == "cip" || m.name == "cip_implicit")
			m.method = Method::cip;
		else if (m.name == "cip_explicit")
			m.integrator = Integrator::cn_explicit_stab;
		else if (m.name == "cip_coarse")
			m.weight_field = WeightField::coarse_only;
		else if (m.name == "galerkin_be")
		{
			m.method = Method::galerkin;
			m.integrator = Integrator::backward_euler;
		}
		else if (m.name == "cip_be")
			m.integrator = Integrator::backward_euler;
		else
			throw InvalidArgument("unknown method '" + m.name + "'");
		return m;
	}

	void ExperimentConfig::validate() const
	{
		if (levels.empty())
			throw InvalidArgument("config: no refinement levels");
		for (std::size_t i = 0; i < levels.size(); ++i)
		{
			if (levels[i] < 0)
				throw InvalidArgument("config: negative refinement level");
			if (i > 0 && levels[i] <= levels[i - 1])
				throw InvalidArgument("config: refinement levels must increase");
		}
		if (mesh.kind == MeshKind::disc && mesh.n_boundary < 6)
			throw InvalidArgument("config: disc needs at least 6 boundary vertices");
		if (mesh.kind == MeshKind::square && mesh.n < 1)
			throw InvalidArgument("config: square mesh needs n >= 1");
		if (mesh.kind == MeshKind::file && mesh.path.empty())
			throw InvalidArgument("config: mesh file path missing");
		if (!(mesh.jitter >= 0 && mesh.jitter < 0.5))
			throw InvalidArgument("config: jitter must lie in [0, 0.5)");
		if (!(mu > 0))
			throw InvalidArgument("config: mu must be positive");
		if (!(gamma >= 0))
			throw InvalidArgument("config: gamma must be non-negative");
		if (!(h_frak > 0))
			throw InvalidArgument("config: h_frak must be positive");
		if (!(T >= 0))
			throw InvalidArgument("config: T must be non-negative");
		if (tau_rule == TauRule::fixed && !(tau > 0))
			throw InvalidArgument("config: tau must be positive");
		if (tau_rule == TauRule::tau_equals_h_over_c && !(tau_c > 0))
			throw InvalidArgument("config: tau_c must be positive");
		if (methods.empty())
			throw InvalidArgument("config: no methods");
		for (const auto &m : methods)
			MethodSpec::parse(m);
		if (reference_extra_levels < 0)
			throw InvalidArgument("config: reference extra levels must be non-negative");
		if (!(reference_tau_factor >= 1) || reference_tau_factor != std::floor(reference_tau_factor))
			throw InvalidArgument("config: reference tau factor must be a positive integer");
		fields::parse(field, mu);
		make_source(f);
	}

	std::string ExperimentConfig::to_text() const
	{
		std::ostringstream o;
		auto join_levels = [this] {
			std::string s;
			for (std::size_t i = 0; i < levels.size(); ++i)
				s += (i ? ", " : "") + std::to_string(levels[i]);
			return s;
		};
		auto join_methods = [this] {
			std::string s;
			for (std::size_t i = 0; i < methods.size(); ++i)
				s += (i ? ", " : "") + methods[i];
			return s;
		};
		const char *kinds[] = {"disc", "square", "file"};
		o << "[experiment]\nname = " << name << "\nseed = " << seed << "\nout_dir = " << out_dir.string() << "\n\n";
		o << "[mesh]\ntype = " << kinds[static_cast<int>(mesh.kind)] << "\nn_boundary = " << mesh.n_boundary
		  << "\nn = " << mesh.n << "\n";
		if (!mesh.path.empty())
			o << "path = " << mesh.path.string() << "\n";
		o << "levels = " << join_levels() << "\njitter = " << fmt(mesh.jitter) << "\n\n";
		o << "[flow]\nfield = " << field << "\nmu = " << fmt(mu) << "\n\n";
		o << "[scheme]\nmethods = " << join_methods() << "\ngamma = " << fmt(gamma) << "\n\n";
		o << "[time]\nT = " << fmt(T) << "\ntau_rule = " << to_string(tau_rule) << "\ntau = " << fmt(tau)
		  << "\ntau_c = " << fmt(tau_c) << "\n\n";
		o << "[data]\nu0 = " << u0.to_string() << "\nf = " << f << "\n\n";
		o << "[filter]\nh_frak = " << fmt(h_frak) << "\ntau_f_reading = " << to_string(tau_f_reading) << "\n\n";
		o << "[reference]\nextra_levels = " << reference_extra_levels << "\ntau_factor = " << fmt(reference_tau_factor)
		  << "\n";
		return o.str();
	}

	ConfigFile ConfigFile::parse(std::istream &in)
	{
		ConfigFile file;
		std::string raw, section;
		int line_no = 0;
		while (std::getline(in, raw))
		{
			++line_no;
			const auto hash = raw.find_first_of("#;");
			const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
			if (line.empty())
				continue;
			if (line.front() == '[')
			{
				if (line.back() != ']' || line.size() < 3)
					throw ParseError("malformed section header '" + line + "'", line_no);
				section = trim(line.substr(1, line.size() - 2));
				continue;
			}
			const auto eq = line.find('=');
			if (eq == std::string::npos)
				throw ParseError("expected 'key = value', got '" + line + "'", line_no);
			const std::string key = trim(line.substr(0, eq));
			const std::string value = trim(line.substr(eq + 1));
			if (key.empty())
				throw ParseError("empty key", line_no);
			const std::string full = section.empty() ? key : section + "." + key;
			if (file.entries_.count(full))
				throw ParseError("duplicate key '" + full + "'", line_no);
			file.entries_[full] = {value, line_no};
		}
		return file;
	}

	ConfigFile ConfigFile::load(const std::filesystem::path &path)
	{
		std::ifstream in(path);
		if (!in)
			throw InvalidArgument("cannot open config file " + path.string());
		return parse(in);
	}

	const std::string &ConfigFile::get(const std::string &key) const
	{
		const auto it = entries_.find(key);
		if (it == entries_.end())
			throw InvalidArgument("config: missing key '" + key + "'");
		return it->second.value;
	}

	int ConfigFile::line(const std::string &key) const
	{
		const auto it = entries_.find(key);
		return it == entries_.end() ? 0 : it->second.line;
	}

	std::vector<std::string> ConfigFile::keys() const
	{
		std::vector<std::string> out;
		for (const auto &[k, e] : entries_)
			out.push_back(k);
		return out;
	}

	ExperimentConfig parse_experiment(const ConfigFile &file, ExperimentConfig cfg)
	{
		for (const auto &key : file.keys())
		{
			const std::string &v = file.get(key);
			try
			{
				if (key == "experiment.name")
					cfg.name = v;
				else if (key == "experiment.seed")
				{
					const long long s = parse_integer(v);
					if (s < 0)
						throw InvalidArgument("seed must be non-negative");
					cfg.seed = static_cast<std::uint64_t>(s);
				}
				else if (key == "experiment.out_dir")
					cfg.out_dir = v;
				else if (key == "mesh.type")
				{
					if (v == "disc")
						cfg.mesh.kind = MeshKind::disc;
					else if (v == "square")
						cfg.mesh.kind = MeshKind::square;
					else if (v == "file")
						cfg.mesh.kind = MeshKind::file;
					else
						throw InvalidArgument("unknown mesh type '" + v + "'");
				}
				else if (key == "mesh.n_boundary")
					cfg.mesh.n_boundary = static_cast<int>(parse_integer(v));
				else if (key == "mesh.n")
					cfg.mesh.n = static_cast<int>(parse_integer(v));
				else if (key == "mesh.path")
					cfg.mesh.path = v;
				else if (key == "mesh.levels")
					cfg.levels = parse_levels(v);
				else if (key == "mesh.jitter")
					cfg.mesh.jitter = parse_real(v);
				else if (key == "flow.field")
				{
					cfg.field = v;
				}
				else if (key == "flow.mu")
					cfg.mu = parse_real(v);
				else if (key == "scheme.methods")
				{
					cfg.methods = split(v, ',');
					for (const auto &m : cfg.methods)
						MethodSpec::parse(m);
				}
				else if (key == "scheme.gamma")
					cfg.gamma = parse_real(v);
				else if (key == "time.T")
					cfg.T = parse_real(v);
				else if (key == "time.tau_rule")
				{
					if (v == "fixed")
						cfg.tau_rule = TauRule::fixed;
					else if (v == "tau_equals_h")
						cfg.tau_rule = TauRule::tau_equals_h;
					else if (v == "tau_equals_h_over_c")
						cfg.tau_rule = TauRule::tau_equals_h_over_c;
					else
						throw InvalidArgument("unknown tau rule '" + v + "'");
				}
				else if (key == "time.tau")
					cfg.tau = parse_real(v);
				else if (key == "time.tau_c")
					cfg.tau_c = parse_real(v);
				else if (key == "data.u0")
					cfg.u0 = InitialDatumSpec::parse(v);
				else if (key == "data.f")
				{
					make_source(v);
					cfg.f = v;
				}
				else if (key == "filter.h_frak")
					cfg.h_frak = parse_real(v);
				else if (key == "filter.tau_f_reading")
					cfg.tau_f_reading = parse_tau_f_reading(v);
				else if (key == "reference.extra_levels")
					cfg.reference_extra_levels = static_cast<int>(parse_integer(v));
				else if (key == "reference.tau_factor")
					cfg.reference_tau_factor = parse_real(v);
				else
					throw InvalidArgument("unknown key '" + key + "'");
			}
			catch (const InvalidArgument &e)
			{
				throw ParseError(e.what(), file.line(key));
			}
		}
		if (file.has("flow.field"))
		{
			try
			{
				fields::parse(cfg.field, cfg.mu);
			}
			catch (const InvalidArgument &e)
			{
				throw ParseError(e.what(), file.line("flow.field"));
			}
		}
		return cfg;
	}

	ExperimentConfig load_experiment(const std::filesystem::path &path, ExperimentConfig base)
	{
		return parse_experiment(ConfigFile::load(path), std::move(base));
	}

	ExperimentConfig preset(const std::string &name)
	{
		ExperimentConfig c;
		c.name = name;
		c.out_dir = "out/" + name;
		if (name == "figure1" || name == "smooth_rate")
		{
			c.mesh.kind = MeshKind::disc;
			c.mesh.jitter = 0.2;
			c.field = "rigid_rotation";
			c.mu = 1e-6;
			c.gamma = 0.005;
			c.u0 = InitialDatumSpec::parse("gaussian(0.3, 0, 0.15)");
			if (name == "figure1")
			{
				c.levels = {2, 3, 4, 5};
				c.T = 2 * std::numbers::pi;
				c.tau_rule = TauRule::tau_equals_h;
				c.methods = {"galerkin", "cip_implicit", "cip_explicit"};
			}
			else
			{
				c.levels = {3, 4, 5, 6};
				c.u0.sigma = 0.1;
				c.T = std::numbers::pi / 2;
				c.tau_rule = TauRule::tau_equals_h_over_c;
				c.tau_c = 8;
				c.methods = {"cip_implicit"};
			}
			return c;
		}
		if (name == "rough_data" || name == "drop_fine_scale" || name == "stability")
		{
			c.mesh.kind = MeshKind::disc;
			c.field = "multiscale(8)";
			c.mu = 1e-6;
			c.gamma = 0.01;
			c.h_frak = 0.01;
			c.T = 0.5;
			c.tau_rule = TauRule::tau_equals_h_over_c;
			c.tau_c = 4;
			c.u0 = InitialDatumSpec::parse("checkerboard(4)");
			c.levels = {4, 5, 6};
			c.methods = name == "rough_data" ? std::vector<std::string>{"cip_implicit", "galerkin"}
											 : std::vector<std::string>{"cip_implicit"};
			if (name == "stability")
			{
				c.field = "rigid_rotation";
				c.levels = {4};
				c.T = 1;
			}
			return c;
		}
		throw InvalidArgument("unknown preset '" + name + "'");
	}

	std::vector<std::string> preset_names() { return {"figure1", "smooth_rate", "rough_data", "drop_fine_scale", "stability"}; }

	MeshPtr jitter_interior(const Mesh &mesh, Real amplitude, std::uint64_t seed)
	{
		VertexArray V = mesh.vertices();
		const Real a = amplitude * mesh.h_min();
		std::mt19937_64 g(seed);
		for (int v = 0; v < mesh.n_vertices(); ++v)
		{
			const Real dx = 2 * unit_uniform(g) - 1;
			const Real dy = 2 * unit_uniform(g) - 1;
			if (mesh.is_boundary_vertex(v))
				continue;
			V(v, 0) += a * dx;
			V(v, 1) += a * dy;
		}
		return std::make_shared<Mesh>(std::move(V), mesh.triangles());
	}

	MeshHierarchy make_hierarchy(const MeshSpec &spec)
	{
		switch (spec.kind)
		{
		case MeshKind::disc:
			return MeshHierarchy::disc(spec.n_boundary);
		case MeshKind::square:
			return MeshHierarchy::unit_square(spec.n);
		default:
			return MeshHierarchy(read_mesh(spec.path));
		}
	}

	LevelMesh experiment_mesh(const ExperimentConfig &cfg, MeshHierarchy &hierarchy, int level)
	{
		LevelMesh lm;
		lm.level = level;
		const MeshPtr base = hierarchy.level(level);
		lm.h = base->h_min();
		lm.mesh = base;
		if (cfg.mesh.jitter > 0)
		{
			lm.seed = cfg.seed + static_cast<std::uint64_t>(level);
			lm.mesh = jitter_interior(*base, cfg.mesh.jitter, lm.seed);
		}
		return lm;
	}

	Real time_step(const ExperimentConfig &cfg, Real h)
	{
		Real target = cfg.tau;
		if (cfg.tau_rule == TauRule::tau_equals_h)
			target = h;
		else if (cfg.tau_rule == TauRule::tau_equals_h_over_c)
			target = h / cfg.tau_c;
		if (cfg.T == 0)
			return target;
		const long n = std::max(1L, std::lround(cfg.T / target));
		return cfg.T / n;
	}

	ProblemSetup make_setup(const ExperimentConfig &cfg, MeshPtr mesh, const MethodSpec &method)
	{
		ProblemSetup s;
		s.mesh = std::move(mesh);
		s.mu = cfg.mu;
		s.field = fields::parse(cfg.field, cfg.mu);
		s.f = make_source(cfg.f);
		s.u0 = cfg.u0.make();
		s.T = cfg.T;
		s.gamma = cfg.gamma;
		s.method = method.method;
		s.weight_field = method.weight_field;
		return s;
	}

	void compute_rates(RateSeries &s)
	{
		const std::size_t n = s.h.size();
		if (s.value.size() != n || (!s.tau.empty() && s.tau.size() != n))
			throw InvalidArgument("compute_rates: column lengths differ");
		for (std::size_t i = 1; i < n; ++i)
			if (!(s.h[i] < s.h[i - 1]) && !(s.h[i] > s.h[i - 1]))
				throw InvalidArgument("compute_rates: mesh sizes must be strictly monotone");
		for (std::size_t i = 2; i < n; ++i)
			if ((s.h[i] < s.h[i - 1]) != (s.h[i - 1] < s.h[i - 2]))
				throw InvalidArgument("compute_rates: mesh sizes must be strictly monotone");

		const Real nan = std::numeric_limits<Real>::quiet_NaN();
		s.excluded.assign(n, false);
		s.has_excluded = false;
		for (std::size_t i = 0; i < n; ++i)
			if (!(s.value[i] > 0) || !std::isfinite(s.value[i]) || !(s.h[i] > 0))
			{
				s.excluded[i] = true;
				s.has_excluded = true;
			}

		s.pairwise.assign(n > 0 ? n - 1 : 0, nan);
		for (std::size_t i = 0; i + 1 < n; ++i)
			if (!s.excluded[i] && !s.excluded[i + 1])
				s.pairwise[i] = std::log(s.value[i] / s.value[i + 1]) / std::log(s.h[i] / s.h[i + 1]);

		Eigen::MatrixX2d A(n, 2);
		Vector b(n);
		int used = 0;
		for (std::size_t i = 0; i < n; ++i)
			if (!s.excluded[i])
			{
				A(used, 0) = std::log(s.h[i]);
				A(used, 1) = 1;
				b(used) = std::log(s.value[i]);
				++used;
			}
		if (used < 2)
		{
			s.slope = nan;
			return;
		}
		const Vector coef = A.topRows(used).colPivHouseholderQr().solve(b.head(used));
		s.slope = coef(0);
	}

	RateSeries make_series(std::string quantity, std::vector<Real> h, std::vector<Real> tau, std::vector<Real> value)
	{
		RateSeries s;
		s.quantity = std::move(quantity);
		s.h = std::move(h);
		s.tau = std::move(tau);
		s.value = std::move(value);
		compute_rates(s);
		return s;
	}

	const RateSeries &RateTable::get(const std::string &quantity) const
	{
		for (const auto &s : series)
			if (s.quantity == quantity)
				return s;
		throw InvalidArgument("rate table '" + name + "' has no quantity '" + quantity + "'");
	}

	bool RateTable::has(const std::string &quantity) const
	{
		return std::any_of(series.begin(), series.end(), [&](const RateSeries &s) { return s.quantity == quantity; });
	}

	void RateTable::write_csv(std::ostream &out) const
	{
		out << "quantity,h,tau,value\n";
		for (const auto &s : series)
			for (std::size_t i = 0; i < s.h.size(); ++i)
				out << s.quantity << ',' << fmt(s.h[i]) << ',' << (i < s.tau.size() ? fmt(s.tau[i]) : "") << ','
					<< fmt(s.value[i]) << '\n';
	}

	void RateTable::write_rates_csv(std::ostream &out) const
	{
		out << "quantity,slope,pairwise,excluded\n";
		for (const auto &s : series)
		{
			out << s.quantity << ',' << fmt(s.slope) << ',';
			for (std::size_t i = 0; i < s.pairwise.size(); ++i)
				out << (i ? " " : "") << fmt(s.pairwise[i]);
			out << ',' << (s.has_excluded ? 1 : 0) << '\n';
		}
	}

	RateTable RateTable::read_csv(std::istream &in, std::string name)
	{
		RateTable t;
		t.name = std::move(name);
		std::string line;
		int line_no = 0;
		std::vector<RateSeries> order;
		while (std::getline(in, line))
		{
			++line_no;
			if (line_no == 1)
			{
				if (trim(line) != "quantity,h,tau,value")
					throw ParseError("unexpected rate table header", line_no);
				continue;
			}
			if (trim(line).empty())
				continue;
			const auto cols = split(line, ',');
			if (cols.size() != 4)
				throw ParseError("expected 4 columns", line_no);
			RateSeries *s = nullptr;
			for (auto &existing : t.series)
				if (existing.quantity == cols[0])
					s = &existing;
			if (!s)
			{
				t.series.emplace_back();
				s = &t.series.back();
				s->quantity = cols[0];
			}
			try
			{
				s->h.push_back(parse_plain(cols[1]));
				if (!cols[2].empty())
					s->tau.push_back(parse_plain(cols[2]));
				s->value.push_back(parse_plain(cols[3]));
			}
			catch (const InvalidArgument &e)
			{
				throw ParseError(e.what(), line_no);
			}
		}
		for (auto &s : t.series)
			compute_rates(s);
		return t;
	}

	SpaceTimeFunction rotating_gaussian_exact(const Vec2 &x0, Real sigma, Real mu)
	{
		const Real s2 = sigma * sigma;
		return [x0, s2, mu](const Vec2 &x, Real t) {
			const Real st2 = s2 + 2 * mu * t;
			const Real c = std::cos(t), s = std::sin(t);
			const Vec2 y(c * x.x() + s * x.y(), -s * x.x() + c * x.y());
			return s2 / st2 * std::exp(-(y - x0).squaredNorm() / (2 * st2));
		};
	}

	RotatingGaussianResult run_rotating_gaussian(const ExperimentConfig &cfg)
	{
		cfg.validate();
		if (trim(cfg.field) != "rigid_rotation")
			throw InvalidArgument("rotating gaussian: field must be rigid_rotation");
		if (cfg.u0.kind != InitialDatumSpec::Kind::gaussian)
			throw InvalidArgument("rotating gaussian: initial datum must be a gaussian");
		if (cfg.f != "zero")
			throw InvalidArgument("rotating gaussian: source must be zero");

		std::vector<MethodSpec> methods;
		for (const auto &m : cfg.methods)
			methods.push_back(MethodSpec::parse(m));

		MeshHierarchy hierarchy = make_hierarchy(cfg.mesh);
		const SpaceTimeFunction exact = rotating_gaussian_exact(cfg.u0.x0, cfg.u0.sigma, cfg.mu);
		RotatingGaussianResult result;
		std::vector<Real> hs, taus;
		std::vector<std::vector<Real>> final_err(methods.size()), linf_err(methods.size());
		for (int level : cfg.levels)
		{
			const LevelMesh lm = experiment_mesh(cfg, hierarchy, level);
			result.meshes.push_back(lm);
			const Real tau = time_step(cfg, lm.h);
			hs.push_back(lm.h);
			taus.push_back(tau);
			for (std::size_t m = 0; m < methods.size(); ++m)
			{
				const ProblemSetup setup = make_setup(cfg, lm.mesh, methods[m]);
				if (cfg.T == 0)
				{
					const FeFunction u = l2_project(lm.mesh, setup.u0, true);
					const Real e = l2_error(u, setup.u0);
					final_err[m].push_back(e);
					linf_err[m].push_back(e);
					continue;
				}
				Real worst = 0;
				TimeSteppingOptions options;
				options.tau = tau;
				options.integrator = methods[m].integrator;
				options.snapshot_stride = step_count(cfg.T, tau);
				options.observer = [&](int, Real t, const FeFunction &u) {
					worst = std::max(worst, l2_error(u, [&](const Vec2 &x) { return exact(x, t); }));
				};
				const TrajectoryRecord traj = run_forward(setup, options);
				final_err[m].push_back(l2_error(traj.final_state(), [&](const Vec2 &x) { return exact(x, cfg.T); }));
				linf_err[m].push_back(worst);
			}
		}
		result.table.name = cfg.name;
		for (std::size_t m = 0; m < methods.size(); ++m)
			result.table.series.push_back(make_series("L2_final_" + methods[m].name, hs, taus, final_err[m]));
		for (std::size_t m = 0; m < methods.size(); ++m)
			result.table.series.push_back(make_series("Linf_L2_" + methods[m].name, hs, taus, linf_err[m]));
		return result;
	}

	namespace
	{
		void require_nested(const ExperimentConfig &cfg, const char *what)
		{
			cfg.validate();
			if (cfg.mesh.jitter != 0)
				throw InvalidArgument(std::string(what) + ": the overkill reference needs nested meshes (jitter = 0)");
			if (!(cfg.T > 0))
				throw InvalidArgument(std::string(what) + ": T must be positive");
		}

		TrajectoryRecord solve_level(const ExperimentConfig &cfg, MeshPtr mesh, const MethodSpec &method, Real tau,
									 int stride)
		{
			const ProblemSetup setup = make_setup(cfg, std::move(mesh), method);
			TimeSteppingOptions options;
			options.tau = tau;
			options.integrator = method.integrator;
			options.snapshot_stride = stride;
			return run_forward(setup, options);
		}
	} // namespace

	OverkillReference compute_overkill_reference(const ExperimentConfig &cfg)
	{
		require_nested(cfg, "overkill reference");
		OverkillReference ref{make_hierarchy(cfg.mesh), cfg.levels.back() + cfg.reference_extra_levels, 0, {}};
		const Real h_finest = ref.hierarchy.level(cfg.levels.back())->h_min();
		const int n_finest = step_count(cfg.T, time_step(cfg, h_finest));
		const int n_ref = n_finest * static_cast<int>(cfg.reference_tau_factor);
		ref.tau = cfg.T / n_ref;
		const TrajectoryRecord traj =
			solve_level(cfg, ref.hierarchy.level(ref.level), MethodSpec::parse("cip_implicit"), ref.tau, n_ref);
		ref.final_state = traj.final_state();
		return ref;
	}

	RoughDataResult run_rough_data(const ExperimentConfig &cfg, OverkillReference *reference)
	{
		require_nested(cfg, "rough data");
		std::vector<MethodSpec> methods;
		for (const auto &m : cfg.methods)
			methods.push_back(MethodSpec::parse(m));

		std::optional<OverkillReference> local;
		if (!reference)
		{
			local.emplace(compute_overkill_reference(cfg));
			reference = &*local;
		}
		FilterConfig fc;
		fc.h_frak = cfg.h_frak;

		RoughDataResult result;
		result.reference_level = reference->level;
		std::vector<Real> hs, taus;
		std::vector<std::vector<Real>> measured(methods.size()), estimate(methods.size());
		for (int level : cfg.levels)
		{
			const MeshPtr mesh = reference->hierarchy.level(level);
			RoughLevel row;
			row.level = level;
			row.h = mesh->h_min();
			row.tau = time_step(cfg, row.h);
			const PecletNumbers pe = compute_peclet(fields::parse(cfg.field, cfg.mu),
													SamplingPlan::on_mesh(*mesh, {0.0}), cfg.mu, 1, mesh->h_max());
			row.peclet_h = pe.Pe_h;
			row.low_peclet = !(pe.Pe_h > 1);
			result.peclet_warning = result.peclet_warning || row.low_peclet;
			for (std::size_t m = 0; m < methods.size(); ++m)
			{
				const ProblemSetup setup = make_setup(cfg, mesh, methods[m]);
				const TrajectoryRecord traj = solve_level(cfg, mesh, methods[m], row.tau, 1);
				const FilteredError fe =
					measure_filtered_error(traj.final_state(), reference->final_state, reference->hierarchy, fc);
				ErrorReport report = a_posteriori_estimate(traj, setup, fc, cfg.tau_f_reading);
				attach_measurement(report, fe.norm_h);
				row.runs.push_back({methods[m].name, fe.norm_h, report});
				measured[m].push_back(fe.norm_h);
				estimate[m].push_back(report.total_estimate);
			}
			hs.push_back(row.h);
			taus.push_back(row.tau);
			result.levels.push_back(std::move(row));
		}
		result.table.name = cfg.name;
		for (std::size_t m = 0; m < methods.size(); ++m)
		{
			result.table.series.push_back(make_series("filtered_error_" + methods[m].name, hs, taus, measured[m]));
			result.table.series.push_back(make_series("estimate_" + methods[m].name, hs, taus, estimate[m]));
		}
		return result;
	}

	const RoughRun &RoughLevel::run(const std::string &method) const
	{
		for (const auto &r : runs)
			if (r.method == method)
				return r;
		throw InvalidArgument("rough data level " + std::to_string(level) + " has no method '" + method + "'");
	}

	DropFineScaleResult run_drop_beta_prime(const ExperimentConfig &cfg, OverkillReference *reference)
	{
		require_nested(cfg, "drop fine scale");
		std::optional<OverkillReference> local;
		if (!reference)
		{
			local.emplace(compute_overkill_reference(cfg));
			reference = &*local;
		}
		FilterConfig fc;
		fc.h_frak = cfg.h_frak;
		const MethodSpec full = MethodSpec::parse("cip_implicit");
		const MethodSpec coarse = MethodSpec::parse("cip_coarse");

		DropFineScaleResult result;
		std::vector<Real> hs, taus, full_err, coarse_err, ratios;
		for (int level : cfg.levels)
		{
			const MeshPtr mesh = reference->hierarchy.level(level);
			DropLevel row;
			row.level = level;
			row.h = mesh->h_min();
			const Real tau = time_step(cfg, row.h);
			const TrajectoryRecord a = solve_level(cfg, mesh, full, tau, step_count(cfg.T, tau));
			const TrajectoryRecord b = solve_level(cfg, mesh, coarse, tau, step_count(cfg.T, tau));
			row.full = measure_filtered_error(a.final_state(), reference->final_state, reference->hierarchy, fc).norm_h;
			row.coarse_only =
				measure_filtered_error(b.final_state(), reference->final_state, reference->hierarchy, fc).norm_h;
			row.ratio = row.coarse_only / row.full;
			row.flagged = !(row.ratio <= 2 && row.ratio >= 0.5);
			result.any_flagged = result.any_flagged || row.flagged;
			hs.push_back(row.h);
			taus.push_back(tau);
			full_err.push_back(row.full);
			coarse_err.push_back(row.coarse_only);
			ratios.push_back(row.ratio);
			result.levels.push_back(row);
		}
		const VelocityField field = fields::parse(cfg.field, cfg.mu);
		const SamplingPlan plan = SamplingPlan::on_mesh(*reference->hierarchy.level(cfg.levels.back()), {0.0});
		const Real fine = sampled_fine_linf(field, plan.points, 0);
		result.fine_ratio = fine * fine / cfg.mu;
		result.table.name = cfg.name;
		result.table.series.push_back(make_series("filtered_error_full", hs, taus, full_err));
		result.table.series.push_back(make_series("filtered_error_coarse_only", hs, taus, coarse_err));
		result.table.series.push_back(make_series("ratio", hs, taus, ratios));
		return result;
	}

	void write_text_file(const std::filesystem::path &path, const std::string &text)
	{
		std::error_code ec;
		if (path.has_parent_path())
			std::filesystem::create_directories(path.parent_path(), ec);
		if (ec)
			throw std::runtime_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
		std::ofstream out(path, std::ios::binary);
		if (!out)
			throw std::runtime_error("cannot open " + path.string() + " for writing");
		out << text;
		out.flush();
		if (!out)
			throw std::runtime_error("write failed for " + path.string());
	}

	void write_vtk(const Mesh &mesh, const std::vector<std::pair<std::string, Vector>> &point_scalars,
				   const std::filesystem::path &path)
	{
		std::ostringstream o;
		o << "# vtk DataFile Version 3.0\ncipflow\nASCII\nDATASET UNSTRUCTURED_GRID\n";
		o << "POINTS " << mesh.n_vertices() << " double\n";
		for (int v = 0; v < mesh.n_vertices(); ++v)
			o << fmt(mesh.vertices()(v, 0)) << ' ' << fmt(mesh.vertices()(v, 1)) << " 0\n";
		o << "CELLS " << mesh.n_triangles() << ' ' << 4 * mesh.n_triangles() << '\n';
		for (int t = 0; t < mesh.n_triangles(); ++t)
			o << "3 " << mesh.triangles()(t, 0) << ' ' << mesh.triangles()(t, 1) << ' ' << mesh.triangles()(t, 2)
			  << '\n';
		o << "CELL_TYPES " << mesh.n_triangles() << '\n';
		for (int t = 0; t < mesh.n_triangles(); ++t)
			o << "5\n";
		if (!point_scalars.empty())
			o << "POINT_DATA " << mesh.n_vertices() << '\n';
		for (const auto &[name, values] : point_scalars)
		{
			if (values.size() != mesh.n_vertices())
				throw InvalidArgument("write_vtk: array '" + name + "' does not match the vertex count");
			o << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
			for (int v = 0; v < values.size(); ++v)
				o << fmt(values[v]) << '\n';
		}
		write_text_file(path, o.str());
	}

	void write_vtk(const TrajectoryRecord &traj, const std::filesystem::path &path)
	{
		if (traj.snapshots.empty())
			throw InvalidArgument("write_vtk: trajectory has no snapshots");
		std::vector<std::pair<std::string, Vector>> arrays;
		for (std::size_t i = 0; i < traj.snapshots.size(); ++i)
		{
			char name[32];
			std::snprintf(name, sizeof name, "u_%06d", traj.snapshot_levels.at(i));
			arrays.emplace_back(name, traj.snapshots[i].coefficients);
		}
		write_vtk(*traj.snapshots.front().mesh, arrays, path);
	}

	void write_trajectory_csv(const TrajectoryRecord &traj, const std::filesystem::path &path)
	{
		std::ostringstream o;
		o << "time,l2,h1_weighted,s_h\n";
		for (std::size_t i = 0; i < traj.times.size(); ++i)
			o << fmt(traj.times[i]) << ',' << fmt(traj.l2[i]) << ',' << fmt(traj.h1_weighted[i]) << ','
			  << fmt(traj.s_h[i]) << '\n';
		write_text_file(path, o.str());
	}
} // namespace cipflow
