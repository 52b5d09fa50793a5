#include "cipflow/fem.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace cipflow
{
	FeFunction::FeFunction(MeshPtr m, Vector c, bool constrained_)
		: mesh(std::move(m)), coefficients(std::move(c)), constrained(constrained_)
	{
		if (!mesh || coefficients.size() != mesh->n_vertices())
			throw InvalidArgument("FeFunction: coefficient count does not match the mesh");
	}

	FeFunction FeFunction::zero(MeshPtr m, bool constrained)
	{
		const int n = m->n_vertices();
		return FeFunction(std::move(m), Vector::Zero(n), constrained);
	}

	bool FeFunction::valid() const
	{
		if (!mesh || coefficients.size() != mesh->n_vertices())
			return false;
		if (constrained)
			for (int v = 0; v < mesh->n_vertices(); ++v)
				if (mesh->is_boundary_vertex(v) && coefficients[v] != 0)
					return false;
		return true;
	}

	Real FeFunction::value(int t, const Eigen::Vector3d &lambda) const
	{
		const auto &T = mesh->triangles();
		return lambda[0] * coefficients[T(t, 0)] + lambda[1] * coefficients[T(t, 1)] + lambda[2] * coefficients[T(t, 2)];
	}

	Vec2 FeFunction::gradient(int t) const
	{
		const auto G = p1_gradients(*mesh, t);
		const auto &T = mesh->triangles();
		return G.transpose() * Eigen::Vector3d(coefficients[T(t, 0)], coefficients[T(t, 1)], coefficients[T(t, 2)]);
	}

	Eigen::Matrix<Real, 3, 2> p1_gradients(const Mesh &mesh, int t)
	{
		const auto c = mesh.corners(t);
		const Real two_area = 2 * mesh.area(t);
		Eigen::Matrix<Real, 3, 2> G;
		for (int i = 0; i < 3; ++i)
		{
			const Vec2 &p = c[(i + 1) % 3];
			const Vec2 &q = c[(i + 2) % 3];
			G.row(i) << (p.y() - q.y()) / two_area, (q.x() - p.x()) / two_area;
		}
		return G;
	}

	DofMap::DofMap(const Mesh &mesh)
	{
		to_free_.assign(mesh.n_vertices(), -1);
		for (int v = 0; v < mesh.n_vertices(); ++v)
			if (!mesh.is_boundary_vertex(v))
			{
				to_free_[v] = n_free();
				free_.push_back(v);
			}
	}

	SparseMatrix DofMap::restrict(const SparseMatrix &A) const
	{
		if (A.rows() != n_total() || A.cols() != n_total())
			throw InvalidArgument("DofMap::restrict: matrix size mismatch");
		std::vector<Triplet> trip;
		trip.reserve(A.nonZeros());
		for (int r = 0; r < A.outerSize(); ++r)
		{
			const int fr = to_free_[r];
			if (fr < 0)
				continue;
			for (SparseMatrix::InnerIterator it(A, r); it; ++it)
			{
				const int fc = to_free_[it.col()];
				if (fc >= 0)
					trip.emplace_back(fr, fc, it.value());
			}
		}
		SparseMatrix R(n_free(), n_free());
		R.setFromTriplets(trip.begin(), trip.end());
		R.makeCompressed();
		return R;
	}

	Vector DofMap::restrict(const Vector &x) const
	{
		if (x.size() != n_total())
			throw InvalidArgument("DofMap::restrict: vector size mismatch");
		Vector r(n_free());
		for (int i = 0; i < n_free(); ++i)
			r[i] = x[free_[i]];
		return r;
	}

	Vector DofMap::extend(const Vector &x) const
	{
		if (x.size() != n_free())
			throw InvalidArgument("DofMap::extend: vector size mismatch");
		Vector r = Vector::Zero(n_total());
		for (int i = 0; i < n_free(); ++i)
			r[free_[i]] = x[i];
		return r;
	}

	namespace
	{
		SparseMatrix from_triplets(int n, std::vector<Triplet> &trip)
		{
			SparseMatrix A(n, n);
			A.setFromTriplets(trip.begin(), trip.end());
			A.makeCompressed();
			return A;
		}
	} // namespace

	SparseMatrix assemble_mass(const Mesh &mesh)
	{
		std::vector<Triplet> trip;
		trip.reserve(9 * mesh.n_triangles());
		for (int t = 0; t < mesh.n_triangles(); ++t)
		{
			const Real a = mesh.area(t);
			for (int i = 0; i < 3; ++i)
				for (int j = 0; j < 3; ++j)
					trip.emplace_back(mesh.triangles()(t, i), mesh.triangles()(t, j), a / (i == j ? 6.0 : 12.0));
		}
		return from_triplets(mesh.n_vertices(), trip);
	}

	SparseMatrix assemble_stiffness(const Mesh &mesh)
	{
		std::vector<Triplet> trip;
		trip.reserve(9 * mesh.n_triangles());
		for (int t = 0; t < mesh.n_triangles(); ++t)
		{
			const auto G = p1_gradients(mesh, t);
			const Eigen::Matrix3d K = mesh.area(t) * G * G.transpose();
			for (int i = 0; i < 3; ++i)
				for (int j = 0; j < 3; ++j)
					trip.emplace_back(mesh.triangles()(t, i), mesh.triangles()(t, j), K(i, j));
		}
		return from_triplets(mesh.n_vertices(), trip);
	}

	SparseMatrix assemble_convection(const Mesh &mesh, const VelocityField &field, Real time, VelocityPart part)
	{
		const auto &rule = triangle_rule(2);
		std::vector<Triplet> trip;
		trip.reserve(9 * mesh.n_triangles());
		for (int t = 0; t < mesh.n_triangles(); ++t)
		{
			const auto c = mesh.corners(t);
			const auto G = p1_gradients(mesh, t);
			Eigen::Matrix3d C = Eigen::Matrix3d::Zero();
			for (int q = 0; q < rule.size(); ++q)
			{
				const auto &lambda = rule.points[q];
				const Vec2 x = map_barycentric(lambda, c[0], c[1], c[2]);
				const Eigen::Vector3d streamline = G * field.evaluate(x, time, part);
				C += (2 * mesh.area(t) * rule.weights[q]) * lambda * streamline.transpose();
			}
			for (int i = 0; i < 3; ++i)
				for (int j = 0; j < 3; ++j)
					trip.emplace_back(mesh.triangles()(t, i), mesh.triangles()(t, j), C(i, j));
		}
		return from_triplets(mesh.n_vertices(), trip);
	}

	Real face_velocity_weight(const Mesh &mesh, const Face &face, const VelocityField &field, Real t,
							  VelocityPart part)
	{
		const Vec2 a = mesh.vertex(face.vertices[0]), b = mesh.vertex(face.vertices[1]);
		Real w = std::max(std::abs(field.evaluate(a, t, part).dot(face.normal)),
						  std::abs(field.evaluate(b, t, part).dot(face.normal)));
		const auto &rule = edge_rule(3);
		for (int q = 0; q < rule.size(); ++q)
		{
			const Vec2 x = rule.points[q][0] * a + rule.points[q][1] * b;
			w = std::max(w, std::abs(field.evaluate(x, t, part).dot(face.normal)));
		}
		return w;
	}

	SparseMatrix assemble_cip(const Mesh &mesh, const VelocityField &field, VelocityPart weight, Real t, Real gamma)
	{
		if (!(gamma >= 0))
			throw InvalidArgument("assemble_cip: penalty gamma must be non-negative");
		std::vector<Triplet> trip;
		trip.reserve(16 * mesh.n_faces());
		for (const auto &face : mesh.faces())
		{
			if (face.is_boundary())
				continue;
			const Real w = face_velocity_weight(mesh, face, field, t, weight);
			const Real scale = gamma * face.length * face.length * w * face.length;
			if (scale == 0)
				continue;

			std::array<int, 6> dofs;
			Eigen::Matrix<Real, 6, 1> jump;
			const auto GL = p1_gradients(mesh, face.left);
			const auto GR = p1_gradients(mesh, face.right);
			for (int i = 0; i < 3; ++i)
			{
				dofs[i] = mesh.triangles()(face.left, i);
				jump[i] = GL.row(i).dot(face.normal);
				dofs[3 + i] = mesh.triangles()(face.right, i);
				jump[3 + i] = -GR.row(i).dot(face.normal);
			}
			for (int i = 0; i < 6; ++i)
				for (int j = 0; j < 6; ++j)
					trip.emplace_back(dofs[i], dofs[j], scale * jump[i] * jump[j]);
		}
		return from_triplets(mesh.n_vertices(), trip);
	}

	Vector assemble_load(const Mesh &mesh, const ScalarFunction &f, int degree)
	{
		const auto &rule = triangle_rule(degree);
		Vector b = Vector::Zero(mesh.n_vertices());
		for (int t = 0; t < mesh.n_triangles(); ++t)
		{
			const auto c = mesh.corners(t);
			const Real jac = 2 * mesh.area(t);
			for (int q = 0; q < rule.size(); ++q)
			{
				const auto &lambda = rule.points[q];
				const Real fx = f(map_barycentric(lambda, c[0], c[1], c[2])) * jac * rule.weights[q];
				for (int i = 0; i < 3; ++i)
					b[mesh.triangles()(t, i)] += fx * lambda[i];
			}
		}
		return b;
	}

	Vector l2_project(const Mesh &mesh, const SparseMatrix &mass, const Vector &load, bool constrained)
	{
		Eigen::SimplicialLDLT<Eigen::SparseMatrix<Real>> chol;
		if (!constrained)
		{
			const Eigen::SparseMatrix<Real> M = mass;
			chol.compute(M);
			if (chol.info() != Eigen::Success)
				throw SolverError("l2_project: mass matrix factorization failed", 1);
			Vector x = chol.solve(load);
			const Real res = (mass * x - load).norm() / std::max(load.norm(), Real(1e-300));
			if (!(res <= 1e-12) && load.norm() > 0)
				throw SolverError("l2_project: residual above tolerance", res, x);
			return x;
		}
		const DofMap dofs(mesh);
		if (dofs.n_free() == 0)
			return Vector::Zero(mesh.n_vertices());
		const Eigen::SparseMatrix<Real> M = dofs.restrict(mass);
		const Vector b = dofs.restrict(load);
		chol.compute(M);
		if (chol.info() != Eigen::Success)
			throw SolverError("l2_project: mass matrix factorization failed", 1);
		const Vector x = chol.solve(b);
		const Real res = (M * x - b).norm() / std::max(b.norm(), Real(1e-300));
		if (!(res <= 1e-12) && b.norm() > 0)
			throw SolverError("l2_project: residual above tolerance", res, dofs.extend(x));
		return dofs.extend(x);
	}

	FeFunction l2_project(MeshPtr mesh, const ScalarFunction &f, bool constrained, int degree)
	{
		const SparseMatrix M = assemble_mass(*mesh);
		const Vector b = assemble_load(*mesh, f, degree);
		Vector x = l2_project(*mesh, M, b, constrained);
		return FeFunction(std::move(mesh), std::move(x), constrained);
	}

	std::vector<Vec2> project_velocity_pw_constant(const Mesh &mesh, const VelocityField &field, Real time,
												   VelocityPart part)
	{
		const auto &tri = triangle_rule(5);
		const auto &edge = edge_rule(3);
		std::vector<Vec2> out(mesh.n_triangles());
		for (int t = 0; t < mesh.n_triangles(); ++t)
		{
			Vec2 boundary_sum = Vec2::Zero();
			Real boundary_length = 0;
			for (int i = 0; i < 3; ++i)
			{
				const Face &f = mesh.faces()[mesh.triangle_face(t, i)];
				if (!f.is_boundary())
					continue;
				if (!(f.length > 0))
					throw InvalidMesh("project_velocity_pw_constant: degenerate boundary face");
				const Vec2 a = mesh.vertex(f.vertices[0]), b = mesh.vertex(f.vertices[1]);
				// Normal and tangential moments of beta on the face; together
				// they fix the face average of the vector.
				Real mn = 0, mt = 0;
				const Vec2 tangent(-f.normal.y(), f.normal.x());
				for (int q = 0; q < edge.size(); ++q)
				{
					const Vec2 beta = field.evaluate(edge.points[q][0] * a + edge.points[q][1] * b, time, part);
					mn += edge.weights[q] * beta.dot(f.normal);
					mt += edge.weights[q] * beta.dot(tangent);
				}
				boundary_sum += f.length * (mn * f.normal + mt * tangent);
				boundary_length += f.length;
			}
			if (boundary_length > 0)
			{
				out[t] = boundary_sum / boundary_length;
				continue;
			}
			const auto c = mesh.corners(t);
			Vec2 mean = Vec2::Zero();
			for (int q = 0; q < tri.size(); ++q)
				mean += 2 * tri.weights[q] * field.evaluate(map_barycentric(tri.points[q], c[0], c[1], c[2]), time, part);
			out[t] = mean;
		}
		return out;
	}

	Real quadratic_form(const SparseMatrix &A, const Vector &x)
	{
		if (A.rows() != x.size() || A.cols() != x.size())
			throw InvalidArgument("quadratic_form: dimension mismatch");
		return x.dot(A * x);
	}

	DiscreteNorms compute_norms(const FeFunction &u, Real mu, const SparseMatrix &mass, const SparseMatrix &stiffness,
								const SparseMatrix *cip)
	{
		const auto n = u.coefficients.size();
		if (mass.rows() != n || stiffness.rows() != n || (cip && cip->rows() != n))
			throw InvalidArgument("compute_norms: matrices and function live on different meshes");
		DiscreteNorms d;
		d.L2 = std::sqrt(std::max(quadratic_form(mass, u.coefficients), Real(0)));
		const Real k = std::max(quadratic_form(stiffness, u.coefficients), Real(0));
		d.H1_semi = std::sqrt(k);
		const Real s = cip ? std::max(quadratic_form(*cip, u.coefficients), Real(0)) : 0;
		d.face_jump = std::sqrt(s);
		d.triple_contrib = mu * k + s;
		return d;
	}

	Real l2_error(const FeFunction &u, const ScalarFunction &exact, int degree)
	{
		const Mesh &mesh = *u.mesh;
		const auto &rule = triangle_rule(degree);
		Real sum = 0;
		for (int t = 0; t < mesh.n_triangles(); ++t)
		{
			const auto c = mesh.corners(t);
			for (int q = 0; q < rule.size(); ++q)
			{
				const Real d = u.value(t, rule.points[q]) - exact(map_barycentric(rule.points[q], c[0], c[1], c[2]));
				sum += 2 * mesh.area(t) * rule.weights[q] * d * d;
			}
		}
		return std::sqrt(sum);
	}

	Real l2_norm(const Mesh &mesh, const ScalarFunction &f, int degree)
	{
		const auto &rule = triangle_rule(degree);
		Real sum = 0;
		for (int t = 0; t < mesh.n_triangles(); ++t)
		{
			const auto c = mesh.corners(t);
			for (int q = 0; q < rule.size(); ++q)
			{
				const Real v = f(map_barycentric(rule.points[q], c[0], c[1], c[2]));
				sum += 2 * mesh.area(t) * rule.weights[q] * v * v;
			}
		}
		return std::sqrt(sum);
	}

	InverseConstants estimate_inverse_constants(const Mesh &mesh)
	{
		Real ci2 = 0, ct2 = 0;
		const Eigen::Matrix2d edge_mass = (Eigen::Matrix2d() << 2, 1, 1, 2).finished() / 6;
		for (int t = 0; t < mesh.n_triangles(); ++t)
		{
			const Real a = mesh.area(t);
			const Real h = mesh.diameter(t);
			const auto G = p1_gradients(mesh, t);
			const Eigen::Matrix3d K = a * G * G.transpose();
			const Eigen::Matrix3d M = a / 12 * (Eigen::Matrix3d::Ones() + Eigen::Matrix3d::Identity());
			Eigen::Matrix3d B = Eigen::Matrix3d::Zero();
			for (int i = 0; i < 3; ++i)
			{
				const int p = (i + 1) % 3, q = (i + 2) % 3;
				const Real len = mesh.faces()[mesh.triangle_face(t, i)].length;
				B(p, p) += len * edge_mass(0, 0);
				B(q, q) += len * edge_mass(1, 1);
				B(p, q) += len * edge_mass(0, 1);
				B(q, p) += len * edge_mass(1, 0);
			}
			Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::Matrix3d> gi(K, M, Eigen::EigenvaluesOnly);
			Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::Matrix3d> gt(B, M, Eigen::EigenvaluesOnly);
			ci2 = std::max(ci2, gi.eigenvalues().maxCoeff() * h * h);
			ct2 = std::max(ct2, gt.eigenvalues().maxCoeff() * h);
		}
		return {std::sqrt(ci2), std::sqrt(ct2)};
	}

	void write_matrix_market(const SparseMatrix &A, const std::filesystem::path &path)
	{
		std::ofstream out(path);
		if (!out)
			throw std::runtime_error("cannot write " + path.string());
		out << "%%MatrixMarket matrix coordinate real general\n";
		out << A.rows() << ' ' << A.cols() << ' ' << A.nonZeros() << '\n' << std::setprecision(17);
		for (int r = 0; r < A.outerSize(); ++r)
			for (SparseMatrix::InnerIterator it(A, r); it; ++it)
				out << r + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
	}
} // namespace cipflow
