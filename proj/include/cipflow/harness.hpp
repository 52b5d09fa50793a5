#pragma once

#include "cipflow/filter_estimator.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace cipflow
{
	enum class TauRule
	{
		fixed,
		tau_equals_h,
		tau_equals_h_over_c
	};

	std::string to_string(TauRule rule);

	enum class MeshKind
	{
		disc,
		square,
		file
	};

	struct MeshSpec
	{
		MeshKind kind = MeshKind::disc;
		int n_boundary = 6;				// disc
		int n = 4;						// square: cells per side of level 0
		std::filesystem::path path;		// file
		Real jitter = 0;				// interior vertex perturbation, fraction of h_min
	};

	struct InitialDatumSpec
	{
		enum class Kind
		{
			zero,
			gaussian,
			checkerboard,
			random_pw
		};

		Kind kind = Kind::gaussian;
		Vec2 x0{0.3, 0};
		Real sigma = 0.1;
		int k = 4;					   // checkerboard frequency
		std::uint64_t seed = 0;		   // random_pw
		int cells = 8;				   // random_pw cells per side of [-1,1]^2

		ScalarFunction make() const;
		std::string to_string() const;
		/// gaussian(x, y, sigma) | checkerboard(k) | random_pw(seed[, cells]) | zero
		static InitialDatumSpec parse(const std::string &spec);
	};

	/// A discretization variant of the experiments.
	struct MethodSpec
	{
		std::string name;
		Method method = Method::cip;
		Integrator integrator = Integrator::cn_implicit_stab;
		WeightField weight_field = WeightField::full_beta;

		/// galerkin | cip | cip_implicit | cip_explicit | cip_coarse | galerkin_be | cip_be
		static MethodSpec parse(const std::string &name);
	};

	struct ExperimentConfig
	{
		std::string name = "experiment";
		MeshSpec mesh;
		std::vector<int> levels{2, 3, 4, 5};
		std::string field = "rigid_rotation";
		Real mu = 1e-6;
		Real gamma = 0.01;
		Real h_frak = 0.01;
		Real T = 1;
		TauRule tau_rule = TauRule::tau_equals_h;
		Real tau = 0.01;  // fixed rule
		Real tau_c = 4;	  // h / c rule
		InitialDatumSpec u0;
		std::string f = "zero"; // zero | constant(c)
		std::vector<std::string> methods{"cip_implicit"};
		int reference_extra_levels = 2;
		Real reference_tau_factor = 4;
		TauFReading tau_f_reading = TauFReading::max;
		std::uint64_t seed = 42;
		std::filesystem::path out_dir = "out";

		/// Throws InvalidArgument on inconsistent settings.
		void validate() const;

		/// Re-parseable text form; every field including seeds is written.
		std::string to_text() const;
	};

	/// Flat `key = value` text with `[section]` headers. Keys are addressed as
	/// `section.key`; `#` and `;` start comments.
	class ConfigFile
	{
	public:
		static ConfigFile parse(std::istream &in);
		static ConfigFile load(const std::filesystem::path &path);

		bool has(const std::string &key) const { return entries_.count(key) > 0; }
		const std::string &get(const std::string &key) const;
		int line(const std::string &key) const;
		std::vector<std::string> keys() const;

	private:
		struct Entry
		{
			std::string value;
			int line;
		};
		std::map<std::string, Entry> entries_;
	};

	/// Applies a config file over `base`. Unknown keys and malformed values
	/// raise ParseError with the line number.
	ExperimentConfig parse_experiment(const ConfigFile &file, ExperimentConfig base = {});
	ExperimentConfig load_experiment(const std::filesystem::path &path, ExperimentConfig base = {});

	/// Built-in experiment recipes: figure1, smooth_rate, rough_data,
	/// drop_fine_scale, stability.
	ExperimentConfig preset(const std::string &name);
	std::vector<std::string> preset_names();

	/// Moves interior vertices by up to amplitude * h_min in each coordinate,
	/// reproducibly from the seed.
	MeshPtr jitter_interior(const Mesh &mesh, Real amplitude, std::uint64_t seed);

	/// Mesh hierarchy of the configured domain, without jitter.
	MeshHierarchy make_hierarchy(const MeshSpec &spec);

	/// Level mesh of an experiment (jittered with seed + level when requested)
	/// and its nominal size, the shortest edge before jitter.
	struct LevelMesh
	{
		MeshPtr mesh;
		Real h = 0;
		int level = 0;
		std::uint64_t seed = 0;
	};

	LevelMesh experiment_mesh(const ExperimentConfig &cfg, MeshHierarchy &hierarchy, int level);

	/// Time step for mesh size h, adjusted so that it divides T.
	Real time_step(const ExperimentConfig &cfg, Real h);

	ProblemSetup make_setup(const ExperimentConfig &cfg, MeshPtr mesh, const MethodSpec &method);

	struct RateSeries
	{
		std::string quantity;
		std::vector<Real> h;
		std::vector<Real> tau;
		std::vector<Real> value;

		Real slope = 0;					// least squares on log-log, NaN when undetermined
		std::vector<Real> pairwise;		// between consecutive levels, NaN where excluded
		std::vector<bool> excluded;		// non-positive or non-finite values
		bool has_excluded = false;
	};

	/// Fills slope and pairwise rates. h must be strictly monotone; fewer than
	/// two usable values give a NaN slope.
	void compute_rates(RateSeries &series);
	RateSeries make_series(std::string quantity, std::vector<Real> h, std::vector<Real> tau, std::vector<Real> value);

	struct RateTable
	{
		std::string name;
		std::vector<RateSeries> series;

		const RateSeries &get(const std::string &quantity) const;
		bool has(const std::string &quantity) const;

		/// Columns quantity,h,tau,value.
		void write_csv(std::ostream &out) const;
		/// Columns quantity,slope,rates.
		void write_rates_csv(std::ostream &out) const;
		static RateTable read_csv(std::istream &in, std::string name = {});
	};

	struct RotatingGaussianResult
	{
		RateTable table; // L2_final_<method>, Linf_L2_<method>
		std::vector<LevelMesh> meshes;
	};

	/// Gaussian convected by a rigid rotation, measured against the exact
	/// rotated and diffused Gaussian. T = 0 measures the projection error only.
	RotatingGaussianResult run_rotating_gaussian(const ExperimentConfig &cfg);

	/// Exact solution for u0 = gaussian under beta = (-y, x) in the plane.
	SpaceTimeFunction rotating_gaussian_exact(const Vec2 &x0, Real sigma, Real mu);

	struct OverkillReference
	{
		MeshHierarchy hierarchy;
		int level = 0;
		Real tau = 0;
		FeFunction final_state;
	};

	/// Full-beta CIP solution on the finest level plus the extra refinements
	/// with the finest step divided by the reference factor.
	OverkillReference compute_overkill_reference(const ExperimentConfig &cfg);

	struct RoughRun
	{
		std::string method;
		Real measured = 0; // filtered error against the reference
		ErrorReport report;
	};

	struct RoughLevel
	{
		int level = 0;
		Real h = 0;
		Real tau = 0;
		Real peclet_h = 0;
		bool low_peclet = false;
		std::vector<RoughRun> runs; // one per configured method

		const RoughRun &run(const std::string &method) const;
	};

	struct RoughDataResult
	{
		std::vector<RoughLevel> levels;
		RateTable table; // filtered_error_<method>, estimate_<method>
		bool peclet_warning = false;
		int reference_level = 0;
	};

	/// Filtered errors against an overkill reference and a posteriori
	/// estimates per level. Pass a precomputed reference to share it.
	RoughDataResult run_rough_data(const ExperimentConfig &cfg, OverkillReference *reference = nullptr);

	struct DropLevel
	{
		int level = 0;
		Real h = 0;
		Real full = 0;
		Real coarse_only = 0;
		Real ratio = 0; // coarse_only / full
		bool flagged = false;
	};

	struct DropFineScaleResult
	{
		std::vector<DropLevel> levels;
		RateTable table;
		bool any_flagged = false;
		/// Largest |beta'|^2 / mu sampled on the finest level.
		Real fine_ratio = 0;
	};

	/// Same as the rough-data runs, solved once with beta and once with
	/// beta_bar, both against the full-beta reference. Ratios outside
	/// [1/2, 2] are flagged.
	DropFineScaleResult run_drop_beta_prime(const ExperimentConfig &cfg, OverkillReference *reference = nullptr);

	/// VTK legacy ASCII unstructured grid with one scalar point array per entry.
	void write_vtk(const Mesh &mesh, const std::vector<std::pair<std::string, Vector>> &point_scalars,
				   const std::filesystem::path &path);
	/// One scalar array per stored snapshot, named u_<level>.
	void write_vtk(const TrajectoryRecord &traj, const std::filesystem::path &path);

	/// Columns time,l2,h1_weighted,s_h.
	void write_trajectory_csv(const TrajectoryRecord &traj, const std::filesystem::path &path);

	/// Writes text to a file, creating parent directories; failures name the path.
	void write_text_file(const std::filesystem::path &path, const std::string &text);
} // namespace cipflow
