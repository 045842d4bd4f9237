#include "qsdlab/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>

#include "qsdlab/errors.hpp"

namespace qsdlab::models {

namespace {

double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

std::uint64_t pack_coords(const std::vector<int>& z) {
    if (z.size() > 4) throw Precondition("population vectors support at most 4 types");
    std::uint64_t key = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (z[i] < 0 || z[i] > 0xFFFF) throw Precondition("population coordinate out of range");
        key |= static_cast<std::uint64_t>(z[i]) << (16 * i);
    }
    return key;
}

std::string coord_label(const std::vector<int>& z) {
    std::string s;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(z[i]);
    }
    return s;
}

int total(const std::vector<int>& z) {
    int t = 0;
    for (int v : z) t += v;
    return t;
}

}  // namespace

std::vector<std::vector<int>> enumerate_population_states(int dim, int cap) {
    std::vector<std::vector<int>> out;
    std::vector<int> z(static_cast<std::size_t>(dim), 0);
    // lexicographic enumeration within each total size
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
        if (pos == dim - 1) {
            z[static_cast<std::size_t>(pos)] = remaining;
            out.push_back(z);
            return;
        }
        for (int v = remaining; v >= 0; --v) {
            z[static_cast<std::size_t>(pos)] = remaining - v;
            rec(pos + 1, v);
        }
    };
    for (int s = 1; s <= cap; ++s) rec(0, s);
    return out;
}

// ---------------------------------------------------------------------------
// Multitype birth-death

MultiBDBuild build_multitype_bd(const MultiBDSpec& spec) {
    if (spec.dimension < 1) throw Precondition("build_multitype_bd: dimension must be >= 1");
    if (spec.radius < 1) throw Precondition("build_multitype_bd: radius must be >= 1");

    auto inside = [&](const std::vector<int>& x) {
        if (total(x) < 1 || total(x) > spec.radius) return false;
        for (int v : x)
            if (v < 0) return false;
        return spec.domain ? spec.domain(x) : true;
    };

    auto coords = enumerate_population_states(spec.dimension, spec.radius);
    std::vector<std::vector<int>> states;
    for (auto& z : coords)
        if (inside(z)) states.push_back(z);
    if (states.empty()) throw Precondition("build_multitype_bd: empty truncation");

    std::unordered_map<std::uint64_t, std::size_t> index;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < states.size(); ++i) {
        index[pack_coords(states[i])] = i;
        labels.push_back(coord_label(states[i]));
    }

    // connectivity of the truncation under nearest-neighbor moves
    {
        graph::Adjacency moves(states.size());
        for (std::size_t i = 0; i < states.size(); ++i)
            for (int d = 0; d < spec.dimension; ++d)
                for (int dir : {+1, -1}) {
                    auto y = states[i];
                    y[static_cast<std::size_t>(d)] += dir;
                    if (!inside(y)) continue;
                    moves[i].push_back(index.at(pack_coords(y)));
                }
        std::vector<bool> seen(states.size(), false);
        std::vector<std::size_t> comp0{0};
        seen[0] = true;
        for (std::size_t h = 0; h < comp0.size(); ++h)
            for (std::size_t v : moves[comp0[h]])
                if (!seen[v]) {
                    seen[v] = true;
                    comp0.push_back(v);
                }
        std::size_t reached = comp0.size();
        if (reached != states.size())
            throw Precondition("build_multitype_bd: truncation splits into " +
                               std::to_string(states.size() - reached) +
                               "+ disconnected state(s) under nearest-neighbor moves");
    }

    MultiBDBuild out;
    out.coords = states;
    auto space = StateSpace::from_labels(labels);
    {
        std::vector<std::vector<double>> cc;
        cc.reserve(states.size());
        for (auto& z : states) cc.emplace_back(z.begin(), z.end());
        std::const_pointer_cast<StateSpace>(space)->set_coordinates(cc);
    }

    std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
    Eigen::VectorXd kill = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(states.size()));
    Eigen::VectorXd stay;  // discrete mode self-weights
    if (spec.discrete_time) stay = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(states.size()));

    for (std::size_t i = 0; i < states.size(); ++i) {
        double moved = 0;
        for (int d = 0; d < spec.dimension; ++d)
            for (int dir : {+1, -1}) {
                double rate = dir > 0 ? spec.birth(states[i], d) : spec.death(states[i], d);
                if (rate < 0) throw Precondition("build_multitype_bd: negative rate");
                if (rate == 0) continue;
                moved += rate;
                auto y = states[i];
                y[static_cast<std::size_t>(d)] += dir;
                if (inside(y))
                    trip.emplace_back(i, index.at(pack_coords(y)), rate);
                else
                    kill(static_cast<Eigen::Index>(i)) += rate;  // domain exit or truncation
            }
        if (spec.discrete_time) {
            if (moved > 1.0 + 1e-12)
                throw Precondition("build_multitype_bd: move probabilities exceed 1 at state " +
                                   labels[i]);
            stay(static_cast<Eigen::Index>(i)) = std::max(0.0, 1.0 - moved);
        }
    }

    if (spec.discrete_time) {
        for (std::size_t i = 0; i < states.size(); ++i)
            if (stay(static_cast<Eigen::Index>(i)) > 0)
                trip.emplace_back(i, i, stay(static_cast<Eigen::Index>(i)));
        // killed moves are simply missing mass in the kernel rows
        out.kernel = SubKernel::from_triplets(space, trip);
    } else {
        out.generator = RateMatrix::from_triplets(space, trip, kill);
    }

    // drift statistics on shells of constant total size
    auto& drift = out.drift;
    std::map<int, std::pair<double, double>> per_shell;  // |x| -> (min ratio, min gap)
    for (auto& z : states) {
        double diff = 0, gap = 0;
        for (int d = 0; d < spec.dimension; ++d) {
            double b = spec.birth(z, d), dd = spec.death(z, d);
            diff += dd - b;
            gap += dd - drift.delta * b;
        }
        double ratio = diff / total(z);
        auto [it, fresh] = per_shell.try_emplace(total(z), ratio, gap);
        if (!fresh) {
            it->second.first = std::min(it->second.first, ratio);
            it->second.second = std::min(it->second.second, gap);
        }
    }
    for (auto& [s, v] : per_shell) {
        drift.shell.push_back(s);
        drift.ratio.push_back(v.first);
        drift.gap.push_back(v.second);
    }
    auto grows = [](const std::vector<double>& t) {
        if (t.size() < 3) return false;
        std::size_t w = std::min<std::size_t>(t.size(), 6);
        for (std::size_t i = t.size() - w; i + 1 < t.size(); ++i)
            if (t[i + 1] < t[i] - 1e-9) return false;
        return t.back() > 0 && t.back() > t[t.size() - w] + 1e-12;
    };
    drift.condition_ratio_grows = grows(drift.ratio);
    drift.condition_gap_grows = grows(drift.gap);
    return out;
}

// ---------------------------------------------------------------------------
// Galton-Watson

GWBuild build_galton_watson(const GWSpec& spec) {
    if (spec.types < 1) throw Precondition("build_galton_watson: types must be >= 1");
    if (static_cast<int>(spec.offspring.size()) != spec.types)
        throw Precondition("build_galton_watson: one offspring law per type required");
    if (spec.truncation < 1) throw Precondition("build_galton_watson: truncation must be >= 1");

    for (const auto& law : spec.offspring) {
        double mass = 0;
        for (const auto& [w, p] : law.atoms) {
            if (p < 0) throw Precondition("offspring probability < 0");
            if (static_cast<int>(w.size()) != spec.types)
                throw Precondition("offspring vector has wrong dimension");
            mass += p;
        }
        if (std::abs(mass - 1.0) > 1e-12)
            throw Precondition("offspring law does not sum to 1");
    }

    GWBuild out;
    out.coords = enumerate_population_states(spec.types, spec.truncation);
    std::unordered_map<std::uint64_t, std::size_t> index;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < out.coords.size(); ++i) {
        index[pack_coords(out.coords[i])] = i;
        labels.push_back(coord_label(out.coords[i]));
    }

    // mean offspring matrix, spectral radius, positive right eigenvector
    out.mean_matrix = Eigen::MatrixXd::Zero(spec.types, spec.types);
    for (int k = 0; k < spec.types; ++k)
        for (const auto& [w, p] : spec.offspring[static_cast<std::size_t>(k)].atoms)
            for (int i = 0; i < spec.types; ++i)
                out.mean_matrix(k, i) += p * w[static_cast<std::size_t>(i)];
    {
        Eigen::VectorXd v = Eigen::VectorXd::Ones(spec.types);
        double rho = 0;
        for (int it = 0; it < 100000; ++it) {
            Eigen::VectorXd w = out.mean_matrix * v + v;
            double nrm = w.lpNorm<1>();
            if (nrm <= 0) break;
            w /= nrm;
            double change = (w - v).lpNorm<Eigen::Infinity>();
            v = std::move(w);
            rho = nrm - 1.0;
            if (change < 1e-14) break;
        }
        out.rho = rho;
        out.v = v / v.lpNorm<Eigen::Infinity>();
    }
    out.supercritical = out.rho >= 1.0;

    // rows by dynamic programming over parents; overflow is killed
    std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
    const std::uint64_t dim = static_cast<std::uint64_t>(spec.types);
    for (std::size_t zi = 0; zi < out.coords.size(); ++zi) {
        std::unordered_map<std::uint64_t, double> dist{{0, 1.0}};
        for (int k = 0; k < spec.types; ++k) {
            const auto& law = spec.offspring[static_cast<std::size_t>(k)];
            for (int parent = 0; parent < out.coords[zi][static_cast<std::size_t>(k)]; ++parent) {
                std::unordered_map<std::uint64_t, double> next;
                next.reserve(dist.size() * law.atoms.size());
                for (const auto& [key, prob] : dist)
                    for (const auto& [w, p] : law.atoms) {
                        if (p == 0) continue;
                        // unpack, add, repack with overflow pruning
                        std::uint64_t nk = 0;
                        int tot = 0;
                        bool overflow = false;
                        for (std::uint64_t a = 0; a < dim; ++a) {
                            int c = static_cast<int>((key >> (16 * a)) & 0xFFFF) +
                                    w[static_cast<std::size_t>(a)];
                            tot += c;
                            if (tot > spec.truncation) {
                                overflow = true;
                                break;
                            }
                            nk |= static_cast<std::uint64_t>(c) << (16 * a);
                        }
                        if (overflow) continue;  // killed at the truncation
                        next[nk] += prob * p;
                    }
                dist = std::move(next);
            }
        }
        for (const auto& [key, prob] : dist) {
            if (key == 0) continue;  // extinction: absorbed at the cemetery
            if (prob <= 0) continue;
            trip.emplace_back(zi, index.at(key), prob);
        }
    }
    auto space = StateSpace::from_labels(labels);
    {
        std::vector<std::vector<double>> cc;
        for (auto& z : out.coords) cc.emplace_back(z.begin(), z.end());
        std::const_pointer_cast<StateSpace>(space)->set_coordinates(cc);
    }
    out.kernel = SubKernel::from_triplets(space, trip);
    return out;
}

// ---------------------------------------------------------------------------
// Perturbed dynamical systems

namespace {

/// area of disc(center 0, radius r) ∩ {x <= X, y <= Y}
double disc_corner_area(double r, double X, double Y) {
    X = std::clamp(X, -r, r);
    if (Y <= -r) return 0.0;
    auto H = [&](double x) {  // antiderivative of sqrt(r^2 - x^2)
        x = std::clamp(x, -r, r);
        return 0.5 * (x * std::sqrt(std::max(0.0, r * r - x * x)) + r * r * std::asin(x / r));
    };
    if (Y >= r) return (H(X) - H(-r)) * 2.0;  // full chords
    double xs = std::sqrt(std::max(0.0, r * r - Y * Y));
    double area = 0.0;
    if (Y >= 0) {
        // |x| >= xs: full chord 2h; |x| < xs: chord Y + h
        double a = std::min(X, -xs);
        area += 2.0 * (H(a) - H(-r));
        if (X > -xs) {
            double b = std::min(X, xs);
            area += (H(b) - H(-xs)) + Y * (b - (-xs));
            if (X > xs) area += 2.0 * (H(X) - H(xs));
        }
    } else {
        // chord positive only for |x| < xs, with length Y + h
        double a = std::max(-xs, -r), b = std::clamp(X, -xs, xs);
        if (b > a) area += (H(b) - H(a)) + Y * (b - a);
    }
    return area;
}

double disc_box_overlap(double r, double cx, double cy, double x0, double x1, double y0,
                        double y1) {
    return disc_corner_area(r, x1 - cx, y1 - cy) - disc_corner_area(r, x0 - cx, y1 - cy) -
           disc_corner_area(r, x1 - cx, y0 - cy) + disc_corner_area(r, x0 - cx, y0 - cy);
}

struct Grid {
    std::vector<double> lo, hi, width;
    std::vector<int> res;
    int dim;
    std::vector<std::vector<double>> centers;        // per state
    std::vector<std::vector<int>> cells;             // per state multi-index
    std::vector<std::ptrdiff_t> state_of_cell;       // flat cell -> state or -1
    std::size_t flat(const std::vector<int>& c) const {
        std::size_t f = 0;
        for (int a = 0; a < dim; ++a)
            f = f * static_cast<std::size_t>(res[static_cast<std::size_t>(a)]) +
                static_cast<std::size_t>(c[static_cast<std::size_t>(a)]);
        return f;
    }
};

Grid make_grid(const PerturbedDSSpec& spec) {
    Grid g;
    g.dim = spec.dim;
    g.lo = spec.box_lo;
    g.hi = spec.box_hi;
    g.res = spec.resolution;
    if (static_cast<int>(g.lo.size()) != spec.dim || static_cast<int>(g.hi.size()) != spec.dim ||
        static_cast<int>(g.res.size()) != spec.dim)
        throw Precondition("build_perturbed_ds: box/resolution dimensions disagree");
    g.width.resize(static_cast<std::size_t>(spec.dim));
    std::size_t cell_count = 1;
    for (int a = 0; a < spec.dim; ++a) {
        auto ai = static_cast<std::size_t>(a);
        if (!(g.hi[ai] > g.lo[ai]) || g.res[ai] < 1)
            throw Precondition("build_perturbed_ds: invalid box or resolution");
        g.width[ai] = (g.hi[ai] - g.lo[ai]) / g.res[ai];
        cell_count *= static_cast<std::size_t>(g.res[ai]);
    }
    g.state_of_cell.assign(cell_count, -1);
    std::vector<int> c(static_cast<std::size_t>(spec.dim), 0);
    while (true) {
        std::vector<double> center(static_cast<std::size_t>(spec.dim));
        for (int a = 0; a < spec.dim; ++a) {
            auto ai = static_cast<std::size_t>(a);
            center[ai] = g.lo[ai] + (c[ai] + 0.5) * g.width[ai];
        }
        if (!spec.domain || spec.domain(center)) {
            g.state_of_cell[g.flat(c)] = static_cast<std::ptrdiff_t>(g.centers.size());
            g.centers.push_back(center);
            g.cells.push_back(c);
        }
        int a = spec.dim - 1;
        while (a >= 0) {
            auto ai = static_cast<std::size_t>(a);
            if (++c[ai] < g.res[ai]) break;
            c[ai] = 0;
            --a;
        }
        if (a < 0) break;
    }
    if (g.centers.empty()) throw Precondition("build_perturbed_ds: empty grid");
    return g;
}

}  // namespace

SubKernel build_perturbed_ds(const PerturbedDSSpec& spec) {
    if (spec.noise == NoiseKind::GaussianDiag &&
        static_cast<int>(spec.sigma.size()) != spec.dim)
        throw Precondition("build_perturbed_ds: sigma must have one entry per axis");
    if (spec.noise == NoiseKind::UniformBall && spec.dim > 2)
        throw Precondition("build_perturbed_ds: uniform-ball noise supports dim <= 2");

    Grid g = make_grid(spec);
    std::vector<std::string> labels;
    labels.reserve(g.centers.size());
    for (std::size_t i = 0; i < g.centers.size(); ++i) labels.push_back("c" + std::to_string(i));
    auto space = StateSpace::from_labels(labels);
    std::const_pointer_cast<StateSpace>(space)->set_coordinates(g.centers);

    std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
    const double prune = 1e-18;

    for (std::size_t i = 0; i < g.centers.size(); ++i) {
        std::vector<double> m = spec.map(g.centers[i]);
        if (static_cast<int>(m.size()) != spec.dim)
            throw Precondition("build_perturbed_ds: map output dimension mismatch");

        if (spec.noise == NoiseKind::GaussianDiag) {
            // per-axis CDF masses, then product over the grid
            std::vector<std::vector<double>> axis_mass(static_cast<std::size_t>(spec.dim));
            for (int a = 0; a < spec.dim; ++a) {
                auto ai = static_cast<std::size_t>(a);
                axis_mass[ai].resize(static_cast<std::size_t>(g.res[ai]));
                for (int c = 0; c < g.res[ai]; ++c) {
                    double lo = g.lo[ai] + c * g.width[ai], hi = lo + g.width[ai];
                    axis_mass[ai][static_cast<std::size_t>(c)] =
                        normal_cdf((hi - m[ai]) / spec.sigma[ai]) -
                        normal_cdf((lo - m[ai]) / spec.sigma[ai]);
                }
            }
            for (std::size_t j = 0; j < g.centers.size(); ++j) {
                double w = 1;
                for (int a = 0; a < spec.dim; ++a) {
                    auto ai = static_cast<std::size_t>(a);
                    w *= axis_mass[ai][static_cast<std::size_t>(g.cells[j][ai])];
                }
                if (w < -1e-12) throw Precondition("build_perturbed_ds: negative cell mass");
                if (w > prune) trip.emplace_back(i, j, w);
            }
        } else {
            const double r = spec.ball_radius;
            for (std::size_t j = 0; j < g.centers.size(); ++j) {
                double w = 0;
                if (spec.dim == 1) {
                    double lo = g.lo[0] + g.cells[j][0] * g.width[0], hi = lo + g.width[0];
                    double ov = std::min(hi, m[0] + r) - std::max(lo, m[0] - r);
                    w = ov > 0 ? ov / (2 * r) : 0;
                } else {
                    double x0 = g.lo[0] + g.cells[j][0] * g.width[0];
                    double y0 = g.lo[1] + g.cells[j][1] * g.width[1];
                    double area = disc_box_overlap(r, m[0], m[1], x0, x0 + g.width[0], y0,
                                                   y0 + g.width[1]);
                    w = area / (M_PI * r * r);
                }
                if (w < -1e-12) throw Precondition("build_perturbed_ds: negative cell mass");
                if (w > prune) trip.emplace_back(i, j, w);
            }
        }
    }
    return SubKernel::from_triplets(space, trip);
}

namespace {

double noise_expectation(const PerturbedDSSpec& spec, const std::vector<double>& mean,
                         const std::function<double(const std::vector<double>&)>& phi) {
    namespace bq = boost::math::quadrature;
    if (spec.noise == NoiseKind::GaussianDiag) {
        if (spec.dim == 1) {
            bq::sinh_sinh<double> integrator;
            const double s = spec.sigma[0];
            return integrator.integrate([&](double t) {
                double dens = std::exp(-t * t / (2 * s * s)) / (s * std::sqrt(2 * M_PI));
                if (dens == 0.0) return 0.0;  // far tail; phi may overflow there
                return phi({mean[0] + t}) * dens;
            });
        }
        if (spec.dim == 2) {
            bq::sinh_sinh<double> outer, inner;
            const double s0 = spec.sigma[0], s1 = spec.sigma[1];
            return outer.integrate([&](double t0) {
                double d0 = std::exp(-t0 * t0 / (2 * s0 * s0)) / (s0 * std::sqrt(2 * M_PI));
                if (d0 == 0.0) return 0.0;
                return d0 * inner.integrate([&](double t1) {
                    double d1 = std::exp(-t1 * t1 / (2 * s1 * s1)) / (s1 * std::sqrt(2 * M_PI));
                    if (d1 == 0.0) return 0.0;
                    return phi({mean[0] + t0, mean[1] + t1}) * d1;
                });
            });
        }
        throw Precondition("noise expectation: Gaussian quadrature supports dim <= 2");
    }
    const double r = spec.ball_radius;
    if (spec.dim == 1) {
        return bq::gauss<double, 64>::integrate(
                   [&](double t) { return phi({mean[0] + t}); }, -r, r) /
               (2 * r);
    }
    if (spec.dim == 2) {
        auto by_radius = [&](double rho) {
            return bq::gauss<double, 64>::integrate(
                [&](double ang) {
                    return phi({mean[0] + rho * std::cos(ang), mean[1] + rho * std::sin(ang)}) *
                           rho;
                },
                0.0, 2 * M_PI);
        };
        return bq::gauss<double, 64>::integrate(by_radius, 0.0, r) / (M_PI * r * r);
    }
    throw Precondition("noise expectation: uniform-ball quadrature supports dim <= 2");
}

}  // namespace

ShellRatioReport verify_perturbed_lyapunov(
    const PerturbedDSSpec& spec, const std::function<double(const std::vector<double>&)>& phi,
    const std::vector<double>& shells) {
    ShellRatioReport rep;
    rep.radii = shells;
    for (double R : shells) {
        std::vector<std::vector<double>> points;
        if (spec.dim == 1) {
            for (double x : {R, -R})
                if ((!spec.domain || spec.domain({x}))) points.push_back({x});
        } else {
            for (int a = 0; a < 16; ++a) {
                double ang = 2 * M_PI * a / 16;
                std::vector<double> x{R * std::cos(ang), R * std::sin(ang)};
                if (!spec.domain || spec.domain(x)) points.push_back(x);
            }
        }
        double worst = 0;
        for (const auto& x : points) {
            double denom = phi(x);
            if (denom <= 0) throw Precondition("verify_perturbed_lyapunov: phi must be positive");
            worst = std::max(worst, noise_expectation(spec, spec.map(x), phi) / denom);
        }
        rep.max_ratio.push_back(worst);
    }
    rep.decreasing = rep.max_ratio.size() >= 2;
    for (std::size_t i = 0; i + 1 < rep.max_ratio.size(); ++i)
        if (rep.max_ratio[i + 1] >= rep.max_ratio[i] - 1e-15) rep.decreasing = false;
    rep.last = rep.max_ratio.empty() ? 0 : rep.max_ratio.back();
    return rep;
}

// ---------------------------------------------------------------------------
// Euler scheme with bridge correction

EulerBuild build_euler_absorbed(const EulerDiffusionSpec& spec) {
    if (spec.cells < 2) throw Precondition("build_euler_absorbed: need at least 2 cells");
    if (!(spec.dt > 0)) throw Precondition("build_euler_absorbed: dt must be positive");
    if (!(spec.grid_hi > spec.grid_lo))
        throw Precondition("build_euler_absorbed: empty grid interval");

    EulerBuild out;
    const int n = spec.cells;
    const double h = (spec.grid_hi - spec.grid_lo) / n;
    out.cell_width = h;

    std::vector<std::string> labels;
    std::vector<std::vector<double>> centers;
    for (int i = 0; i < n; ++i) {
        labels.push_back("x" + std::to_string(i));
        centers.push_back({spec.grid_lo + (i + 0.5) * h});
    }
    auto space = StateSpace::from_labels(labels);
    std::const_pointer_cast<StateSpace>(space)->set_coordinates(centers);

    std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
    const bool left_finite = std::isfinite(spec.alpha);
    const bool right_finite = std::isfinite(spec.beta);

    for (int i = 0; i < n; ++i) {
        const double x = centers[static_cast<std::size_t>(i)][0];
        const double sig = spec.sigma(x);
        if (!(sig > 0)) throw Precondition("build_euler_absorbed: sigma must be positive");
        const double m = x + spec.drift(x) * spec.dt;
        const double s = std::sqrt(spec.dt) * sig;
        const double kill_factor = std::exp(-spec.kappa(x) * spec.dt);
        const double var = sig * sig * spec.dt;

        for (int j = 0; j < n; ++j) {
            double lo = spec.grid_lo + j * h, hi = lo + h;
            double w = normal_cdf((hi - m) / s) - normal_cdf((lo - m) / s);
            if (w <= 1e-18) continue;
            const double y = lo + 0.5 * h;
            if (spec.bridge) {
                if (left_finite && (x <= spec.alpha || y <= spec.alpha)) continue;
                if (right_finite && (x >= spec.beta || y >= spec.beta)) continue;
                if (left_finite) {
                    double expo = 2.0 * (x - spec.alpha) * (y - spec.alpha) / var;
                    if (expo > 700.0) {
                        expo = 700.0;
                        ++out.bridge_clamps;
                    }
                    w *= 1.0 - std::exp(-expo);
                }
                if (right_finite) {
                    double expo = 2.0 * (spec.beta - x) * (spec.beta - y) / var;
                    if (expo > 700.0) {
                        expo = 700.0;
                        ++out.bridge_clamps;
                    }
                    w *= 1.0 - std::exp(-expo);
                }
            }
            w *= kill_factor;
            if (w > 1e-18) trip.emplace_back(static_cast<std::size_t>(i),
                                             static_cast<std::size_t>(j), w);
        }
    }
    out.kernel = SubKernel::from_triplets(space, trip);
    return out;
}

// ---------------------------------------------------------------------------
// Penalized kernels

PenalizedBuild build_penalized(const PenalizedSpec& spec) {
    const std::size_t n = spec.base.size();
    if (static_cast<std::size_t>(spec.g.size()) != n)
        throw DimensionMismatch(spec.g.size(), n, "penalized g");
    if (spec.zeta.space()->size() != n)
        throw DimensionMismatch(spec.zeta.space()->size(), n, "penalized zeta");
    if (!(spec.C >= 1)) throw Precondition("build_penalized: C must be >= 1");

    // two-sided estimate verified entrywise on the truncation
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t z = 0; z < n; ++z) {
            double q = spec.base.entry(y, z);
            double lo = spec.g(static_cast<Eigen::Index>(y)) * spec.zeta.weight(z);
            double hi = spec.C * lo;
            if (q + 1e-12 < lo || q > hi + 1e-12)
                throw Precondition("build_penalized: two-sided estimate violated at (y=" +
                                   std::to_string(y) + ", A={" + std::to_string(z) + "})");
        }
    }

    PenalizedBuild out;
    out.C = spec.C;
    double sup_p = 0;
    std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
    for (std::size_t x = 0; x < n; ++x)
        spec.base.for_each_in_row(x, [&](std::size_t y, double q) {
            double p = spec.penalty(x, y);
            if (!(p > 0) || p > 1.0)
                throw Precondition("build_penalized: penalty out of (0,1] at (" +
                                   std::to_string(x) + "," + std::to_string(y) + ")");
            sup_p = std::max(sup_p, p);
            trip.emplace_back(x, y, p * q);
        });
    out.kernel = SubKernel::from_triplets(spec.base.space(), trip);

    for (const auto& Lk : spec.exhaustion) {
        double inf_p = std::numeric_limits<double>::infinity();
        for (std::size_t x : Lk.indices())
            for (std::size_t y : Lk.indices()) inf_p = std::min(inf_p, spec.penalty(x, y));
        if (!(inf_p > 0))
            throw Precondition("build_penalized: penalty vanishes on an exhaustion set");
        out.inf_penalty.push_back(inf_p);
    }

    // the bounded-penalization reduction p' = p/(sup p + 1) must leave the
    // conditional evolution unchanged
    {
        std::vector<std::tuple<std::size_t, std::size_t, double>> trip2;
        for (std::size_t x = 0; x < n; ++x)
            spec.base.for_each_in_row(x, [&](std::size_t y, double q) {
                trip2.emplace_back(x, y, spec.penalty(x, y) / (sup_p + 1.0) * q);
            });
        auto reduced = SubKernel::from_triplets(spec.base.space(), trip2);
        auto a = evolve_conditional(out.kernel, Dist::uniform(spec.base.space()), 3);
        auto b = evolve_conditional(reduced, Dist::uniform(spec.base.space()), 3);
        out.bounded_reduction_consistent = tv_distance(a, b) < 1e-12;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Three-set reducible chains

void check_three_set_pattern(const SubKernel& k, const StateSet& D1, const StateSet& D2,
                             const StateSet& D3) {
    for (std::size_t x = 0; x < k.size(); ++x)
        k.for_each_in_row(x, [&](std::size_t y, double w) {
            bool bad = (D2.contains(x) && D1.contains(y)) ||
                       (D3.contains(x) && (D1.contains(y) || D2.contains(y)));
            if (bad && w > 0)
                throw Precondition("three-set pattern violated: positive mass " +
                                   std::to_string(w) + " from state " + std::to_string(x) +
                                   " into a forbidden block (state " + std::to_string(y) + ")");
        });
}

ThreeSetBuild build_three_set(const ThreeSetSpec& spec) {
    const auto n1 = spec.d1.rows(), n2 = spec.d2.rows(), n3 = spec.d3.rows();
    if (spec.d1.cols() != n1 || spec.d2.cols() != n2 || spec.d3.cols() != n3)
        throw Precondition("build_three_set: diagonal blocks must be square");
    if (spec.d12.rows() != n1 || spec.d12.cols() != n2 || spec.d13.rows() != n1 ||
        spec.d13.cols() != n3 || spec.d23.rows() != n2 || spec.d23.cols() != n3)
        throw Precondition("build_three_set: cross-block shapes disagree");

    const auto n = n1 + n2 + n3;
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(n, n);
    full.block(0, 0, n1, n1) = spec.d1;
    full.block(0, n1, n1, n2) = spec.d12;
    full.block(0, n1 + n2, n1, n3) = spec.d13;
    full.block(n1, n1, n2, n2) = spec.d2;
    full.block(n1, n1 + n2, n2, n3) = spec.d23;
    full.block(n1 + n2, n1 + n2, n3, n3) = spec.d3;

    std::vector<std::string> labels;
    for (Eigen::Index i = 0; i < n1; ++i) labels.push_back("a" + std::to_string(i));
    for (Eigen::Index i = 0; i < n2; ++i) labels.push_back("b" + std::to_string(i));
    for (Eigen::Index i = 0; i < n3; ++i) labels.push_back("c" + std::to_string(i));

    ThreeSetBuild out;
    out.kernel = SubKernel::from_dense(StateSpace::from_labels(labels), full);

    std::vector<std::size_t> i1, i2, i3;
    for (Eigen::Index i = 0; i < n1; ++i) i1.push_back(static_cast<std::size_t>(i));
    for (Eigen::Index i = 0; i < n2; ++i) i2.push_back(static_cast<std::size_t>(n1 + i));
    for (Eigen::Index i = 0; i < n3; ++i) i3.push_back(static_cast<std::size_t>(n1 + n2 + i));
    out.D1 = StateSet(i1, static_cast<std::size_t>(n));
    out.D2 = StateSet(i2, static_cast<std::size_t>(n));
    out.D3 = StateSet(i3, static_cast<std::size_t>(n));
    check_three_set_pattern(out.kernel, out.D1, out.D2, out.D3);

    out.y_kernel = SubKernel::from_dense(StateSpace::with_size(static_cast<std::size_t>(n2)),
                                         spec.d2);
    out.theta0_Y = solve_qsd(out.y_kernel).theta0;
    out.gamma_below_theta0Y = spec.gamma < out.theta0_Y;

    // exponential moments of the entry/exit times at rate gamma
    const auto& k = out.kernel;
    auto sup_solution = [&](const std::vector<std::size_t>& S, const Eigen::VectorXd& b,
                            double& sup_out) {
        auto sol = detail::discounted_fixed_point(k, S, b, spec.gamma);
        if (!sol.all_finite) return false;
        sup_out = S.empty() ? 0.0 : sol.values.maxCoeff();
        return true;
    };
    Eigen::VectorXd b_entry(static_cast<Eigen::Index>(i1.size()));
    Eigen::VectorXd b_exit(static_cast<Eigen::Index>(i1.size()));
    for (std::size_t q = 0; q < i1.size(); ++q) {
        double into2 = 0, into3 = 0;
        k.for_each_in_row(i1[q], [&](std::size_t y, double w) {
            if (out.D2.contains(y)) into2 += w;
            if (out.D3.contains(y)) into3 += w;
        });
        b_entry(static_cast<Eigen::Index>(q)) = into2;
        b_exit(static_cast<Eigen::Index>(q)) = into3 + k.absorption(i1[q]);
    }
    Eigen::VectorXd b_tail(static_cast<Eigen::Index>(i3.size()));
    for (std::size_t q = 0; q < i3.size(); ++q)
        b_tail(static_cast<Eigen::Index>(q)) = k.absorption(i3[q]);

    bool f1 = sup_solution(i1, b_entry, out.moment_entry);
    bool f2 = sup_solution(i1, b_exit, out.moment_exit);
    bool f3 = sup_solution(i3, b_tail, out.moment_tail);
    out.moments_finite = f1 && f2 && f3 && out.gamma_below_theta0Y;
    return out;
}

// ---------------------------------------------------------------------------
// Vitality model

VitalityBuild build_vitality(const VitalitySpec& spec) {
    if (spec.n_max < 2 || spec.y_max < 2)
        throw Precondition("build_vitality: truncations must be >= 2");

    VitalityBuild out;
    out.f_min = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    for (int nn = 1; nn <= spec.n_max; ++nn) {
        double f = spec.metabolic(nn);
        if (!(f > 0)) throw Precondition("build_vitality: metabolic rate must be positive");
        if (f < out.f_min) {
            second = out.f_min;
            out.f_min = f;
            out.n0 = nn;
        } else if (f < second) {
            second = f;
        }
    }
    if (second - out.f_min <= 1e-12)
        throw Precondition("build_vitality: the metabolic minimizer is not unique");

    // state (n, y), n in 1..n_max, y in 1..y_max; y = 0 absorbs, overflow kills
    auto idx = [&](int nn, int yy) {
        return static_cast<std::size_t>((nn - 1) * spec.y_max + (yy - 1));
    };
    std::vector<std::string> labels;
    for (int nn = 1; nn <= spec.n_max; ++nn)
        for (int yy = 1; yy <= spec.y_max; ++yy) {
            labels.push_back(std::to_string(nn) + "," + std::to_string(yy));
            out.coords.emplace_back(nn, yy);
        }
    auto space = StateSpace::from_labels(labels);

    std::vector<std::tuple<std::size_t, std::size_t, double>> jumps;
    Eigen::VectorXd kill =
        Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.n_max * spec.y_max));
    for (int nn = 1; nn <= spec.n_max; ++nn)
        for (int yy = 1; yy <= spec.y_max; ++yy) {
            std::size_t i = idx(nn, yy);
            double f = spec.metabolic(nn);
            if (nn < spec.n_max)
                jumps.emplace_back(i, idx(nn + 1, yy), 1.0);
            else
                kill(static_cast<Eigen::Index>(i)) += 1.0;  // aging clock leaves the window
            double up = f * spec.birth(yy), down = f * spec.death(yy);
            if (yy < spec.y_max)
                jumps.emplace_back(i, idx(nn, yy + 1), up);
            else
                kill(static_cast<Eigen::Index>(i)) += up;
            if (yy > 1)
                jumps.emplace_back(i, idx(nn, yy - 1), down);
            else
                kill(static_cast<Eigen::Index>(i)) += down;  // vitality 0: real absorption
        }
    out.generator = RateMatrix::from_triplets(space, jumps, kill);

    // decay rate of the unmodulated vitality chain Z
    {
        std::vector<std::tuple<std::size_t, std::size_t, double>> zj;
        Eigen::VectorXd zkill = Eigen::VectorXd::Zero(spec.y_max);
        for (int yy = 1; yy <= spec.y_max; ++yy) {
            std::size_t i = static_cast<std::size_t>(yy - 1);
            double up = spec.birth(yy), down = spec.death(yy);
            if (yy < spec.y_max)
                zj.emplace_back(i, i + 1, up);
            else
                zkill(static_cast<Eigen::Index>(i)) += up;
            if (yy > 1)
                zj.emplace_back(i, i - 1, down);
            else
                zkill(static_cast<Eigen::Index>(i)) += down;
        }
        auto Z = RateMatrix::from_triplets(StateSpace::with_size(static_cast<std::size_t>(spec.y_max)),
                                           zj, zkill);
        double Lambda = Z.max_exit_rate();
        auto sol = solve_qsd(uniformize(Z, Lambda), 1e-13);
        out.lambda0_Z = lambda0_from_theta0(Lambda, sol.theta0);
    }

    out.liminf_f_tail = std::numeric_limits<double>::infinity();
    for (int nn = std::max(1, spec.n_max - 4); nn <= spec.n_max; ++nn)
        out.liminf_f_tail = std::min(out.liminf_f_tail, spec.metabolic(nn));
    out.hypothesis = out.liminf_f_tail > spec.metabolic(out.n0) + 1.0 / out.lambda0_Z;
    out.lambda0Z_below_d1 = out.lambda0_Z <= spec.death(1) + 1e-9;
    return out;
}

}  // namespace qsdlab::models
