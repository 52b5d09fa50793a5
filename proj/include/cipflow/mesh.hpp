#pragma once

#include "cipflow/types.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

namespace cipflow
{
	using VertexArray = Eigen::Matrix<Real, Eigen::Dynamic, 2>;
	using TriangleArray = Eigen::Matrix<int, Eigen::Dynamic, 3>;

	/// An edge of the triangulation. For interior faces the unit normal points
	/// from the left triangle into the right one; for boundary faces it is the
	/// outward normal of the single adjacent triangle.
	struct Face
	{
		static constexpr int boundary = -1;

		std::array<int, 2> vertices;
		int left;
		int right;
		Vec2 normal;
		Real length;

		bool is_boundary() const { return right == boundary; }
	};

	/// Conforming triangulation of a polygonal domain. Immutable once built.
	class Mesh
	{
	public:
		/// Builds connectivity. Every triangle must have strictly positive
		/// signed area (counter-clockwise); throws InvalidMesh otherwise.
		Mesh(VertexArray vertices, TriangleArray triangles);

		int n_vertices() const { return static_cast<int>(vertices_.rows()); }
		int n_triangles() const { return static_cast<int>(triangles_.rows()); }
		int n_faces() const { return static_cast<int>(faces_.size()); }

		const VertexArray &vertices() const { return vertices_; }
		const TriangleArray &triangles() const { return triangles_; }
		const std::vector<Face> &faces() const { return faces_; }

		Vec2 vertex(int v) const { return vertices_.row(v).transpose(); }
		std::array<Vec2, 3> corners(int t) const;

		/// Face index opposite local vertex i of triangle t.
		int triangle_face(int t, int i) const { return triangle_faces_(t, i); }

		bool is_boundary_vertex(int v) const { return boundary_vertex_[v]; }
		const std::vector<bool> &boundary_vertex_flags() const { return boundary_vertex_; }

		Real area(int t) const { return areas_[t]; }
		/// Triangle diameter (longest edge).
		Real diameter(int t) const { return diameters_[t]; }
		Vec2 centroid(int t) const;

		/// Global mesh index, the largest triangle diameter.
		Real h_max() const { return h_max_; }
		/// Shortest edge in the mesh.
		Real h_min() const { return h_min_; }

		Real measure() const;

	private:
		VertexArray vertices_;
		TriangleArray triangles_;
		Eigen::Matrix<int, Eigen::Dynamic, 3> triangle_faces_;
		std::vector<Face> faces_;
		std::vector<bool> boundary_vertex_;
		std::vector<Real> areas_;
		std::vector<Real> diameters_;
		Real h_max_ = 0;
		Real h_min_ = 0;
	};

	using MeshPtr = std::shared_ptr<const Mesh>;

	template <typename Scalar>
	Scalar signed_area(const Vec2T<Scalar> &a, const Vec2T<Scalar> &b, const Vec2T<Scalar> &c)
	{
		return Scalar(0.5) * ((b - a).x() * (c - a).y() - (b - a).y() * (c - a).x());
	}

	/// Structured mesh of [0,1]^2, each cell split along the SW-NE diagonal.
	Mesh generate_unit_square_mesh(int n);

	/// Projects a newly created boundary midpoint; identity when empty.
	using BoundaryProjector = std::function<Vec2(const Vec2 &)>;

	/// Result of one uniform (red) refinement. parents[v] holds the two coarse
	/// vertices whose midpoint created fine vertex v; inherited vertices have
	/// parents {v, v}.
	struct Refinement
	{
		Mesh fine;
		std::vector<std::array<int, 2>> parents;
	};

	Refinement refine_uniform(const Mesh &mesh, const BoundaryProjector &project = {});

	/// Regular n_boundary-gon inscribed in the unit circle, fanned from the
	/// origin, then refined n_refine times with new boundary vertices pushed
	/// onto the circle.
	Mesh generate_polygonal_disc_mesh(int n_boundary, int n_refine);

	Vec2 project_to_unit_circle(const Vec2 &x);

	/// Sequence of nested meshes produced by repeated uniform refinement.
	/// Level 0 is the coarsest mesh.
	class MeshHierarchy
	{
	public:
		MeshHierarchy(Mesh coarse, BoundaryProjector project = {});

		static MeshHierarchy unit_square(int n);
		static MeshHierarchy disc(int n_boundary);

		/// Ensures levels up to `level` exist and returns that mesh.
		MeshPtr level(int level);
		int n_levels() const { return static_cast<int>(meshes_.size()); }

		/// Interpolates a P1 coefficient vector from `from` to the finer `to`.
		/// Exact for nested meshes; throws InvalidArgument when `to < from` or
		/// the vector length does not match the source level.
		Vector prolongate(const Vector &coeffs, int from, int to);

		/// Returns the level index that holds exactly this mesh, or -1.
		int find(const Mesh &mesh) const;
		/// Transpose of prolongate(., from, to): maps a dual vector on level `to`
		/// (e.g. a load) back to the coarser level `from`.
		Vector prolongate_transpose(const Vector &fine_values, int from, int to);

	private:
		BoundaryProjector project_;
		std::vector<MeshPtr> meshes_;
		std::vector<std::vector<std::array<int, 2>>> parents_;
	};

	struct MeshStatistics
	{
		Real h_max;
		Real h_min;
		Real ratio;
		int n_vertices;
		int n_edges;
		int n_triangles;
		int n_interior_faces;
	};

	MeshStatistics mesh_statistics(const Mesh &mesh);

	/// ASCII mesh format: header `cipflow-mesh 1`, then `V Nt`, V lines of
	/// coordinates, Nt lines of 0-based vertex triples; `#` starts a comment.
	Mesh read_mesh(const std::filesystem::path &path);
	Mesh read_mesh(std::istream &in);
	void write_mesh(const Mesh &mesh, const std::filesystem::path &path);
	void write_mesh(const Mesh &mesh, std::ostream &out);
} // namespace cipflow
