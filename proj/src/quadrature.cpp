#include "cipflow/quadrature.hpp"

#include <cmath>
#include <numeric>

namespace cipflow
{
	Real QuadratureRule::weight_sum() const { return std::accumulate(weights.begin(), weights.end(), Real(0)); }

	namespace
	{
		QuadratureRule make_triangle(int degree)
		{
			QuadratureRule q;
			q.degree = degree;
			auto add = [&q](Real l0, Real l1, Real w) {
				q.points.emplace_back(l0, l1, 1 - l0 - l1);
				q.weights.push_back(0.5 * w);
			};
			auto add3 = [&add](Real a, Real b, Real w) {
				add(a, b, w);
				add(b, 1 - a - b, w);
				add(1 - a - b, a, w);
			};
			switch (degree)
			{
			case 1:
				add(1.0 / 3, 1.0 / 3, 1.0);
				break;
			case 2:
				add3(2.0 / 3, 1.0 / 6, 1.0 / 3);
				break;
			case 3:
				// Strang-Fix six-point rule (positive weights)
				add3(0.659027622374092, 0.231933368553031, 1.0 / 6);
				add3(0.109039009072877, 0.231933368553031, 1.0 / 6);
				break;
			case 4:
				add3(0.108103018168070, 0.445948490915965, 0.223381589678011);
				add3(0.816847572980459, 0.091576213509771, 0.109951743655322);
				break;
			case 5:
			{
				// Dunavant degree 5, seven points
				const Real s15 = std::sqrt(15.0);
				const Real a1 = (6 - s15) / 21, a2 = (6 + s15) / 21;
				const Real w1 = (155 - s15) / 1200, w2 = (155 + s15) / 1200;
				add(1.0 / 3, 1.0 / 3, 9.0 / 40);
				add3(1 - 2 * a1, a1, w1);
				add3(1 - 2 * a2, a2, w2);
				break;
			}
			default:
				throw InvalidArgument("triangle_rule: supported degrees are 1..5");
			}
			return q;
		}

		QuadratureRule make_edge(int n)
		{
			std::vector<Real> x, w;
			switch (n)
			{
			case 1:
				x = {0};
				w = {2};
				break;
			case 2:
				x = {-1 / std::sqrt(3.0), 1 / std::sqrt(3.0)};
				w = {1, 1};
				break;
			case 3:
				x = {-std::sqrt(0.6), 0, std::sqrt(0.6)};
				w = {5.0 / 9, 8.0 / 9, 5.0 / 9};
				break;
			case 4:
			{
				const Real a = std::sqrt(3.0 / 7 - 2.0 / 7 * std::sqrt(1.2));
				const Real b = std::sqrt(3.0 / 7 + 2.0 / 7 * std::sqrt(1.2));
				const Real wa = (18 + std::sqrt(30.0)) / 36, wb = (18 - std::sqrt(30.0)) / 36;
				x = {-b, -a, a, b};
				w = {wb, wa, wa, wb};
				break;
			}
			case 5:
			{
				const Real a = std::sqrt(5 - 2 * std::sqrt(10.0 / 7)) / 3;
				const Real b = std::sqrt(5 + 2 * std::sqrt(10.0 / 7)) / 3;
				const Real wa = (322 + 13 * std::sqrt(70.0)) / 900, wb = (322 - 13 * std::sqrt(70.0)) / 900;
				x = {-b, -a, 0, a, b};
				w = {wb, wa, 128.0 / 225, wa, wb};
				break;
			}
			default:
				throw InvalidArgument("edge_rule: supported point counts are 1..5");
			}
			QuadratureRule q;
			q.degree = 2 * n - 1;
			for (std::size_t i = 0; i < x.size(); ++i)
			{
				const Real s = 0.5 * (x[i] + 1);
				q.points.emplace_back(1 - s, s, 0);
				q.weights.push_back(0.5 * w[i]);
			}
			return q;
		}
	} // namespace

	const QuadratureRule &triangle_rule(int degree)
	{
		static const std::vector<QuadratureRule> rules = [] {
			std::vector<QuadratureRule> r;
			for (int d = 1; d <= 5; ++d)
				r.push_back(make_triangle(d));
			return r;
		}();
		if (degree < 1 || degree > 5)
			throw InvalidArgument("triangle_rule: supported degrees are 1..5");
		return rules[degree - 1];
	}

	const QuadratureRule &edge_rule(int n_points)
	{
		static const std::vector<QuadratureRule> rules = [] {
			std::vector<QuadratureRule> r;
			for (int n = 1; n <= 5; ++n)
				r.push_back(make_edge(n));
			return r;
		}();
		if (n_points < 1 || n_points > 5)
			throw InvalidArgument("edge_rule: supported point counts are 1..5");
		return rules[n_points - 1];
	}
} // namespace cipflow
