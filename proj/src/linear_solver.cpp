#include "cipflow/linear_solver.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

#include <cmath>

namespace cipflow
{
	LinearSolverConfig LinearSolverConfig::for_size(int n, LinearSolverKind iterative, Real rtol)
	{
		LinearSolverConfig c;
		c.kind = n <= max_direct_size ? LinearSolverKind::direct_small : iterative;
		c.rtol = rtol;
		return c;
	}

	void LinearSolverConfig::validate(int n) const
	{
		if (!(rtol > 0 && rtol <= 1e-4))
			throw InvalidArgument("linear solver: rtol must lie in (0, 1e-4]");
		if (max_iters < 1)
			throw InvalidArgument("linear solver: max_iters must be positive");
		if (kind == LinearSolverKind::direct_small && n > max_direct_size)
			throw InvalidArgument("linear solver: direct_small is limited to " + std::to_string(max_direct_size)
								  + " unknowns");
	}

	struct LinearSolver::Impl
	{
		using ColMatrix = Eigen::SparseMatrix<Real, Eigen::ColMajor>;

		SparseMatrix A;
		Eigen::SparseLU<ColMatrix> lu;
		Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<Real>> cg;
		Eigen::BiCGSTAB<SparseMatrix, Eigen::IncompleteLUT<Real>> bicgstab;
	};

	LinearSolver::LinearSolver(LinearSolverConfig config) : config_(config), impl_(std::make_unique<Impl>()) {}
	LinearSolver::~LinearSolver() = default;
	LinearSolver::LinearSolver(LinearSolver &&) noexcept = default;
	LinearSolver &LinearSolver::operator=(LinearSolver &&) noexcept = default;

	Real symmetry_defect(const SparseMatrix &A)
	{
		const Real n = A.norm();
		if (n == 0)
			return 0;
		const SparseMatrix At = A.transpose();
		return (A - At).norm() / n;
	}

	void LinearSolver::compute(const SparseMatrix &A)
	{
		if (A.rows() != A.cols())
			throw InvalidArgument("linear solver: matrix must be square");
		config_.validate(static_cast<int>(A.rows()));
		impl_->A = A;
		switch (config_.kind)
		{
		case LinearSolverKind::direct_small:
			impl_->lu.compute(Impl::ColMatrix(A));
			if (impl_->lu.info() != Eigen::Success)
				throw SolverError("sparse LU factorization failed: " + impl_->lu.lastErrorMessage(), 1);
			break;
		case LinearSolverKind::cg:
			if (symmetry_defect(A) > 1e-12)
				throw InvalidArgument("linear solver: cg requires a symmetric matrix");
			impl_->cg.setTolerance(config_.rtol);
			impl_->cg.setMaxIterations(config_.max_iters);
			impl_->cg.compute(impl_->A);
			break;
		case LinearSolverKind::bicgstab:
			impl_->bicgstab.preconditioner().setDroptol(1e-4);
			impl_->bicgstab.preconditioner().setFillfactor(4);
			impl_->bicgstab.setTolerance(config_.rtol);
			impl_->bicgstab.setMaxIterations(config_.max_iters);
			impl_->bicgstab.compute(impl_->A);
			if (impl_->bicgstab.info() != Eigen::Success)
				throw SolverError("incomplete LU preconditioner failed", 1);
			break;
		}
	}

	LinearSolveResult LinearSolver::solve(const Vector &b, const Vector *guess) const
	{
		const auto &A = impl_->A;
		if (b.size() != A.rows())
			throw InvalidArgument("linear solver: right-hand side size mismatch");
		const Real bnorm = b.norm();
		if (bnorm == 0)
			return {Vector::Zero(b.size()), 0, 0};

		LinearSolveResult r;
		r.iterations = 0;
		switch (config_.kind)
		{
		case LinearSolverKind::direct_small:
			r.x = impl_->lu.solve(b);
			break;
		case LinearSolverKind::cg:
			r.x = guess ? impl_->cg.solveWithGuess(b, *guess).eval() : impl_->cg.solve(b).eval();
			r.iterations = static_cast<int>(impl_->cg.iterations());
			break;
		case LinearSolverKind::bicgstab:
			r.x = guess ? impl_->bicgstab.solveWithGuess(b, *guess).eval() : impl_->bicgstab.solve(b).eval();
			r.iterations = static_cast<int>(impl_->bicgstab.iterations());
			break;
		}
		r.residual = (A * r.x - b).norm() / bnorm;
		const Real tol = config_.kind == LinearSolverKind::direct_small ? std::max(config_.rtol, Real(1e-10))
																		   : 10 * config_.rtol;
		if (!std::isfinite(r.residual) || r.residual > tol)
			throw SolverError("linear solve did not reach tolerance after " + std::to_string(r.iterations)
								  + " iterations",
							  r.residual, r.x);
		return r;
	}

	LinearSolveResult solve_linear(const SparseMatrix &A, const Vector &b, const LinearSolverConfig &config)
	{
		LinearSolver s(config);
		s.compute(A);
		return s.solve(b);
	}
} // namespace cipflow
