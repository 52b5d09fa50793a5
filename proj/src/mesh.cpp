#include "cipflow/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace cipflow
{
	namespace
	{
		std::int64_t edge_key(int a, int b, int n_vertices)
		{
			if (a > b)
				std::swap(a, b);
			return static_cast<std::int64_t>(a) * n_vertices + b;
		}
	} // namespace

	Mesh::Mesh(VertexArray vertices, TriangleArray triangles)
		: vertices_(std::move(vertices)), triangles_(std::move(triangles))
	{
		const int nv = n_vertices();
		const int nt = n_triangles();
		if (nt == 0)
			throw InvalidMesh("mesh has no triangles");

		areas_.resize(nt);
		diameters_.resize(nt);
		for (int t = 0; t < nt; ++t)
		{
			for (int i = 0; i < 3; ++i)
				if (triangles_(t, i) < 0 || triangles_(t, i) >= nv)
					throw InvalidMesh("triangle " + std::to_string(t) + " references vertex out of range");
			const auto c = corners(t);
			areas_[t] = signed_area(c[0], c[1], c[2]);
			if (!(areas_[t] > 0))
				throw InvalidMesh("triangle " + std::to_string(t) + " has non-positive signed area");
			diameters_[t] = std::max({(c[1] - c[0]).norm(), (c[2] - c[1]).norm(), (c[0] - c[2]).norm()});
		}

		// Faces are numbered in order of first appearance in the triangle loop.
		triangle_faces_.resize(nt, 3);
		std::unordered_map<std::int64_t, int> lookup;
		lookup.reserve(static_cast<std::size_t>(3 * nt));
		for (int t = 0; t < nt; ++t)
		{
			for (int i = 0; i < 3; ++i)
			{
				const int a = triangles_(t, (i + 1) % 3);
				const int b = triangles_(t, (i + 2) % 3);
				const auto key = edge_key(a, b, nv);
				auto it = lookup.find(key);
				if (it == lookup.end())
				{
					const Vec2 d = vertex(b) - vertex(a);
					Face f;
					f.vertices = {a, b};
					f.left = t;
					f.right = Face::boundary;
					f.length = d.norm();
					f.normal = Vec2(d.y(), -d.x()) / f.length;
					lookup.emplace(key, n_faces());
					triangle_faces_(t, i) = n_faces();
					faces_.push_back(f);
				}
				else
				{
					Face &f = faces_[it->second];
					if (f.right != Face::boundary)
						throw InvalidMesh("edge shared by more than two triangles");
					f.right = t;
					triangle_faces_(t, i) = it->second;
				}
			}
		}

		boundary_vertex_.assign(nv, false);
		h_min_ = std::numeric_limits<Real>::infinity();
		for (const auto &f : faces_)
		{
			h_min_ = std::min(h_min_, f.length);
			if (f.is_boundary())
			{
				boundary_vertex_[f.vertices[0]] = true;
				boundary_vertex_[f.vertices[1]] = true;
			}
		}
		h_max_ = *std::max_element(diameters_.begin(), diameters_.end());
	}

	std::array<Vec2, 3> Mesh::corners(int t) const
	{
		return {vertex(triangles_(t, 0)), vertex(triangles_(t, 1)), vertex(triangles_(t, 2))};
	}

	Vec2 Mesh::centroid(int t) const
	{
		const auto c = corners(t);
		return (c[0] + c[1] + c[2]) / 3.0;
	}

	Real Mesh::measure() const
	{
		Real sum = 0;
		for (Real a : areas_)
			sum += a;
		return sum;
	}

	Mesh generate_unit_square_mesh(int n)
	{
		if (n < 1)
			throw InvalidArgument("generate_unit_square_mesh: n must be >= 1");
		const int np = n + 1;
		VertexArray V(np * np, 2);
		for (int j = 0; j < np; ++j)
			for (int i = 0; i < np; ++i)
				V.row(j * np + i) << Real(i) / n, Real(j) / n;

		TriangleArray T(2 * n * n, 3);
		int t = 0;
		for (int j = 0; j < n; ++j)
			for (int i = 0; i < n; ++i)
			{
				const int v00 = j * np + i, v10 = v00 + 1, v01 = v00 + np, v11 = v01 + 1;
				T.row(t++) << v00, v10, v11;
				T.row(t++) << v00, v11, v01;
			}
		return Mesh(std::move(V), std::move(T));
	}

	Vec2 project_to_unit_circle(const Vec2 &x) { return x.normalized(); }

	Refinement refine_uniform(const Mesh &mesh, const BoundaryProjector &project)
	{
		const int nv = mesh.n_vertices();
		const int nf = mesh.n_faces();
		const int nt = mesh.n_triangles();

		VertexArray V(nv + nf, 2);
		V.topRows(nv) = mesh.vertices();
		std::vector<std::array<int, 2>> parents(nv + nf);
		for (int v = 0; v < nv; ++v)
			parents[v] = {v, v};
		for (int f = 0; f < nf; ++f)
		{
			const auto &face = mesh.faces()[f];
			Vec2 mid = 0.5 * (mesh.vertex(face.vertices[0]) + mesh.vertex(face.vertices[1]));
			if (face.is_boundary() && project)
				mid = project(mid);
			V.row(nv + f) = mid.transpose();
			parents[nv + f] = face.vertices;
		}

		TriangleArray T(4 * nt, 3);
		for (int t = 0; t < nt; ++t)
		{
			const int a = mesh.triangles()(t, 0), b = mesh.triangles()(t, 1), c = mesh.triangles()(t, 2);
			// midpoint opposite local vertex i
			const int m_bc = nv + mesh.triangle_face(t, 0);
			const int m_ca = nv + mesh.triangle_face(t, 1);
			const int m_ab = nv + mesh.triangle_face(t, 2);
			T.row(4 * t + 0) << a, m_ab, m_ca;
			T.row(4 * t + 1) << m_ab, b, m_bc;
			T.row(4 * t + 2) << m_ca, m_bc, c;
			T.row(4 * t + 3) << m_ab, m_bc, m_ca;
		}
		return {Mesh(std::move(V), std::move(T)), std::move(parents)};
	}

	Mesh generate_polygonal_disc_mesh(int n_boundary, int n_refine)
	{
		if (n_boundary < 6)
			throw InvalidArgument("generate_polygonal_disc_mesh: n_boundary must be >= 6");
		if (n_refine < 0)
			throw InvalidArgument("generate_polygonal_disc_mesh: n_refine must be >= 0");
		MeshHierarchy hierarchy = MeshHierarchy::disc(n_boundary);
		return *hierarchy.level(n_refine);
	}

	MeshHierarchy::MeshHierarchy(Mesh coarse, BoundaryProjector project)
		: project_(std::move(project))
	{
		meshes_.push_back(std::make_shared<const Mesh>(std::move(coarse)));
	}

	MeshHierarchy MeshHierarchy::unit_square(int n) { return MeshHierarchy(generate_unit_square_mesh(n)); }

	MeshHierarchy MeshHierarchy::disc(int n_boundary)
	{
		if (n_boundary < 6)
			throw InvalidArgument("disc hierarchy: n_boundary must be >= 6");
		VertexArray V(n_boundary + 1, 2);
		V.row(0) << 0, 0;
		for (int k = 0; k < n_boundary; ++k)
		{
			const Real angle = 2 * std::numbers::pi * k / n_boundary;
			V.row(k + 1) << std::cos(angle), std::sin(angle);
		}
		TriangleArray T(n_boundary, 3);
		for (int k = 0; k < n_boundary; ++k)
			T.row(k) << 0, k + 1, (k + 1) % n_boundary + 1;
		return MeshHierarchy(Mesh(std::move(V), std::move(T)), project_to_unit_circle);
	}

	MeshPtr MeshHierarchy::level(int level)
	{
		if (level < 0)
			throw InvalidArgument("mesh hierarchy: negative level");
		while (n_levels() <= level)
		{
			auto r = refine_uniform(*meshes_.back(), project_);
			parents_.push_back(std::move(r.parents));
			meshes_.push_back(std::make_shared<const Mesh>(std::move(r.fine)));
		}
		return meshes_[level];
	}

	Vector MeshHierarchy::prolongate(const Vector &coeffs, int from, int to)
	{
		if (to < from || from < 0)
			throw InvalidArgument("prolongate: target level must not be coarser than the source level");
		level(to);
		if (coeffs.size() != meshes_[from]->n_vertices())
			throw InvalidArgument("prolongate: coefficient vector does not match the source level");
		Vector u = coeffs;
		for (int l = from; l < to; ++l)
		{
			const auto &parents = parents_[l];
			const auto &fine = *meshes_[l + 1];
			Vector next(fine.n_vertices());
			for (int v = 0; v < fine.n_vertices(); ++v)
				next[v] = 0.5 * (u[parents[v][0]] + u[parents[v][1]]);
			// Projected boundary midpoints lie off the coarse polygon; a
			// constrained function vanishes there in either case.
			u = std::move(next);
		}
		return u;
	}

	Vector MeshHierarchy::prolongate_transpose(const Vector &fine_values, int from, int to)
	{
		if (to < from || from < 0)
			throw InvalidArgument("prolongate_transpose: target level must not be coarser than the source level");
		level(to);
		if (fine_values.size() != meshes_[to]->n_vertices())
			throw InvalidArgument("prolongate_transpose: vector does not match the fine level");
		Vector y = fine_values;
		for (int l = to - 1; l >= from; --l)
		{
			const auto &parents = parents_[l];
			Vector coarse = Vector::Zero(meshes_[l]->n_vertices());
			for (std::size_t v = 0; v < parents.size(); ++v)
			{
				coarse[parents[v][0]] += 0.5 * y[v];
				coarse[parents[v][1]] += 0.5 * y[v];
			}
			y = std::move(coarse);
		}
		return y;
	}

	int MeshHierarchy::find(const Mesh &mesh) const
	{
		for (int l = 0; l < n_levels(); ++l)
			if (meshes_[l].get() == &mesh)
				return l;
		for (int l = 0; l < n_levels(); ++l)
		{
			const Mesh &m = *meshes_[l];
			if (m.n_vertices() == mesh.n_vertices() && m.n_triangles() == mesh.n_triangles()
				&& m.triangles() == mesh.triangles() && m.vertices() == mesh.vertices())
				return l;
		}
		return -1;
	}

	MeshStatistics mesh_statistics(const Mesh &mesh)
	{
		MeshStatistics s;
		s.h_max = mesh.h_max();
		s.h_min = mesh.h_min();
		s.ratio = s.h_max / s.h_min;
		s.n_vertices = mesh.n_vertices();
		s.n_edges = mesh.n_faces();
		s.n_triangles = mesh.n_triangles();
		s.n_interior_faces = static_cast<int>(
			std::count_if(mesh.faces().begin(), mesh.faces().end(), [](const Face &f) { return !f.is_boundary(); }));
		return s;
	}

	namespace
	{
		// Returns false at end of input.
		bool next_data_line(std::istream &in, std::string &line, int &line_no)
		{
			while (std::getline(in, line))
			{
				++line_no;
				const auto first = line.find_first_not_of(" \t\r");
				if (first == std::string::npos || line[first] == '#')
					continue;
				return true;
			}
			return false;
		}
	} // namespace

	Mesh read_mesh(std::istream &in)
	{
		std::string line;
		int line_no = 0;
		if (!next_data_line(in, line, line_no))
			throw ParseError("missing header", line_no + 1);
		{
			std::istringstream ss(line);
			std::string magic;
			int version = 0;
			if (!(ss >> magic >> version) || magic != "cipflow-mesh" || version != 1)
				throw ParseError("expected header 'cipflow-mesh 1'", line_no);
		}
		int nv = 0, nt = 0;
		if (!next_data_line(in, line, line_no))
			throw ParseError("missing size line", line_no + 1);
		{
			std::istringstream ss(line);
			if (!(ss >> nv >> nt) || nv < 3 || nt < 1)
				throw ParseError("malformed size line, expected 'V Nt'", line_no);
		}

		VertexArray V(nv, 2);
		for (int v = 0; v < nv; ++v)
		{
			if (!next_data_line(in, line, line_no))
				throw ParseError("unexpected end of file in vertex block", line_no + 1);
			std::istringstream ss(line);
			Real x, y;
			if (!(ss >> x >> y))
				throw ParseError("malformed vertex line", line_no);
			V.row(v) << x, y;
		}

		TriangleArray T(nt, 3);
		for (int t = 0; t < nt; ++t)
		{
			if (!next_data_line(in, line, line_no))
				throw ParseError("unexpected end of file in triangle block", line_no + 1);
			std::istringstream ss(line);
			int i, j, k;
			if (!(ss >> i >> j >> k))
				throw ParseError("malformed triangle line", line_no);
			for (int idx : {i, j, k})
				if (idx < 0 || idx >= nv)
					throw ParseError("vertex index " + std::to_string(idx) + " out of range", line_no);
			const Real a = signed_area<Real>(V.row(i).transpose(), V.row(j).transpose(), V.row(k).transpose());
			if (a == 0 || !std::isfinite(a))
				throw ParseError("degenerate triangle", line_no);
			if (a < 0)
				std::swap(j, k);
			T.row(t) << i, j, k;
		}
		try
		{
			return Mesh(std::move(V), std::move(T));
		}
		catch (const InvalidMesh &e)
		{
			throw ParseError(e.what(), line_no);
		}
	}

	Mesh read_mesh(const std::filesystem::path &path)
	{
		std::ifstream in(path);
		if (!in)
			throw InvalidArgument("cannot open mesh file " + path.string());
		return read_mesh(in);
	}

	void write_mesh(const Mesh &mesh, std::ostream &out)
	{
		out << "cipflow-mesh 1\n" << mesh.n_vertices() << ' ' << mesh.n_triangles() << '\n';
		out << std::setprecision(17);
		for (int v = 0; v < mesh.n_vertices(); ++v)
			out << mesh.vertices()(v, 0) << ' ' << mesh.vertices()(v, 1) << '\n';
		for (int t = 0; t < mesh.n_triangles(); ++t)
			out << mesh.triangles()(t, 0) << ' ' << mesh.triangles()(t, 1) << ' ' << mesh.triangles()(t, 2) << '\n';
	}

	void write_mesh(const Mesh &mesh, const std::filesystem::path &path)
	{
		if (path.has_parent_path())
			std::filesystem::create_directories(path.parent_path());
		std::ofstream out(path);
		if (!out)
			throw std::runtime_error("cannot write mesh file " + path.string());
		write_mesh(mesh, out);
		if (!out)
			throw std::runtime_error("I/O failure writing " + path.string());
	}
} // namespace cipflow
