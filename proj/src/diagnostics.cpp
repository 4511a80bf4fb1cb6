#include "jointfuse/diagnostics.hpp"

#include "jointfuse/csv.hpp"
#include "jointfuse/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace jointfuse::diagnostics {

namespace {

double sample_variance(const Eigen::VectorXd& x) {
  if (x.size() < 2) return 0.0;
  return (x.array() - x.mean()).square().sum() / static_cast<double>(x.size() - 1);
}

std::string number(double x) {
  if (std::isnan(x)) return "NaN";
  if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << x;
  return os.str();
}

}  // namespace

double gelman_rubin(const std::vector<Eigen::VectorXd>& input, bool split) {
  std::vector<Eigen::VectorXd> chains;
  if (split) {
    for (const auto& c : input) {
      const Eigen::Index half = c.size() / 2;
      chains.push_back(c.head(half));
      chains.push_back(c.tail(half));
    }
  } else {
    chains = input;
  }
  if (chains.size() < 2) throw Error(ErrorKind::DegenerateChains, "R-hat needs at least two chains");
  const Eigen::Index m = chains.front().size();
  if (m < 4) throw Error(ErrorKind::DegenerateChains, "R-hat needs at least four draws per chain");
  for (const auto& c : chains) {
    if (c.size() != m) throw Error(ErrorKind::DegenerateChains, "chains have unequal lengths");
  }
  const double n_chains = static_cast<double>(chains.size());
  const double md = static_cast<double>(m);
  Eigen::VectorXd means(chains.size());
  double W = 0.0;
  for (std::size_t j = 0; j < chains.size(); ++j) {
    means[static_cast<Eigen::Index>(j)] = chains[j].mean();
    W += sample_variance(chains[j]);
  }
  W /= n_chains;
  const double B_over_m = sample_variance(means);
  if (W <= 0.0) return B_over_m > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double V = (md - 1.0) / md * W + B_over_m + B_over_m / n_chains;
  return std::max(1.0, std::sqrt(V / W));
}

double quantile_type7(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

const ParameterSummary& PosteriorSummary::at(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw Error(ErrorKind::UnknownParameter, name);
}

PosteriorSummary summarize(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                           const std::vector<std::string>& select, bool split_rhat) {
  if (chains.empty()) throw Error(ErrorKind::DegenerateChains, "no chains to summarize");
  for (const auto& c : chains) {
    if (c.cols() != static_cast<Eigen::Index>(names.size())) {
      throw Error(ErrorKind::DataError, "draw matrix does not match the parameter names");
    }
  }
  std::unordered_map<std::string, Eigen::Index> index;
  for (std::size_t j = 0; j < names.size(); ++j) index.emplace(names[j], static_cast<Eigen::Index>(j));
  std::vector<Eigen::Index> columns;
  if (select.empty()) {
    for (std::size_t j = 0; j < names.size(); ++j) columns.push_back(static_cast<Eigen::Index>(j));
  } else {
    for (const auto& s : select) {
      auto it = index.find(s);
      if (it == index.end()) throw Error(ErrorKind::UnknownParameter, s);
      columns.push_back(it->second);
    }
  }

  PosteriorSummary out;
  out.chains = chains.size();
  out.draws_per_chain = static_cast<std::size_t>(chains.front().rows());
  bool equal_lengths = true;
  for (const auto& c : chains) equal_lengths = equal_lengths && c.rows() == chains.front().rows();
  const bool with_rhat = chains.size() >= 2 && equal_lengths && chains.front().rows() >= (split_rhat ? 8 : 4);

  for (Eigen::Index col : columns) {
    ParameterSummary row;
    row.name = names[static_cast<std::size_t>(col)];
    std::vector<double> pooled;
    std::vector<Eigen::VectorXd> per_chain;
    for (const auto& c : chains) {
      per_chain.push_back(c.col(col));
      for (Eigen::Index i = 0; i < c.rows(); ++i) pooled.push_back(c(i, col));
    }
    const double n = static_cast<double>(pooled.size());
    double sum = 0.0;
    for (double v : pooled) sum += v;
    row.mean = sum / n;
    double ss = 0.0;
    for (double v : pooled) ss += (v - row.mean) * (v - row.mean);
    row.sd = pooled.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    std::sort(pooled.begin(), pooled.end());
    row.q025 = quantile_type7(pooled, 0.025);
    row.q975 = quantile_type7(pooled, 0.975);
    if (with_rhat) row.rhat = gelman_rubin(per_chain, split_rhat);
    out.rows.push_back(row);
  }
  return out;
}

std::vector<std::string> unconverged(const PosteriorSummary& summary, double threshold) {
  std::vector<std::string> out;
  for (const auto& r : summary.rows) {
    if (r.rhat && !(*r.rhat <= threshold)) out.push_back(r.name);
  }
  return out;
}

std::string summary_json(const PosteriorSummary& summary, double rhat_threshold) {
  nlohmann::ordered_json j;
  j["chains"] = summary.chains;
  j["draws_per_chain"] = summary.draws_per_chain;
  j["rhat_threshold"] = rhat_threshold;
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& r : summary.rows) {
    nlohmann::ordered_json p;
    p["name"] = r.name;
    p["mean"] = r.mean;
    p["sd"] = r.sd;
    p["q2.5"] = r.q025;
    p["q97.5"] = r.q975;
    if (r.rhat) {
      if (std::isfinite(*r.rhat)) {
        p["rhat"] = *r.rhat;
      } else {
        p["rhat"] = "Inf";
      }
    }
    params.push_back(p);
  }
  j["parameters"] = params;
  const auto bad = unconverged(summary, rhat_threshold);
  j["converged"] = bad.empty();
  j["unconverged"] = bad;
  return j.dump(2) + "\n";
}

std::string summary_table(const PosteriorSummary& summary) {
  std::size_t width = 9;
  for (const auto& r : summary.rows) width = std::max(width, r.name.size());
  const bool rhat = std::any_of(summary.rows.begin(), summary.rows.end(), [](const auto& r) { return r.rhat.has_value(); });
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "Parameter" << std::right;
  for (const char* h : {"Est.", "SD.", "2.5%", "97.5%"}) os << std::setw(11) << h;
  if (rhat) os << std::setw(9) << "Rhat";
  os << '\n';
  for (const auto& r : summary.rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.name << std::right;
    for (double v : {r.mean, r.sd, r.q025, r.q975}) os << std::setw(11) << number(v);
    if (rhat) {
      os << std::setw(9);
      if (r.rhat) {
        std::ostringstream rs;
        if (std::isfinite(*r.rhat)) {
          rs << std::fixed << std::setprecision(3) << *r.rhat;
        } else {
          rs << "Inf";
        }
        os << rs.str();
      } else {
        os << "-";
      }
    }
    os << '\n';
  }
  return os.str();
}

void export_plot_data(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                      PlotKind kind, std::ostream& out) {
  const auto P = static_cast<Eigen::Index>(names.size());
  switch (kind) {
    case PlotKind::Trace:
      out << "chain,iteration,parameter,value\n";
      for (std::size_t c = 0; c < chains.size(); ++c) {
        for (Eigen::Index i = 0; i < chains[c].rows(); ++i) {
          for (Eigen::Index p = 0; p < P; ++p) {
            out << c + 1 << ',' << i + 1 << ',' << names[static_cast<std::size_t>(p)] << ','
                << csv::format_double(chains[c](i, p)) << '\n';
          }
        }
      }
      break;
    case PlotKind::Density:
      out << "parameter,chain,bin,lower,upper,count\n";
      for (Eigen::Index p = 0; p < P; ++p) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& c : chains) {
          if (c.rows() == 0) continue;
          lo = std::min(lo, c.col(p).minCoeff());
          hi = std::max(hi, c.col(p).maxCoeff());
        }
        if (!(lo <= hi)) continue;
        const double width = (hi - lo) / kDensityBins;
        for (std::size_t c = 0; c < chains.size(); ++c) {
          std::vector<long> counts(kDensityBins, 0);
          for (Eigen::Index i = 0; i < chains[c].rows(); ++i) {
            int bin = width > 0.0 ? static_cast<int>((chains[c](i, p) - lo) / width) : 0;
            counts[std::clamp(bin, 0, kDensityBins - 1)] += 1;
          }
          for (int b = 0; b < kDensityBins; ++b) {
            const double lower = lo + b * width;
            const double upper = b + 1 == kDensityBins ? hi : lo + (b + 1) * width;
            out << names[static_cast<std::size_t>(p)] << ',' << c + 1 << ',' << b + 1 << ',' << csv::format_double(lower)
                << ',' << csv::format_double(upper) << ',' << counts[b] << '\n';
          }
        }
      }
      break;
    case PlotKind::Caterpillar: {
      const PosteriorSummary s = summarize(chains, names);
      out << "parameter,mean,q2.5,q97.5\n";
      for (const auto& r : s.rows) {
        out << r.name << ',' << csv::format_double(r.mean) << ',' << csv::format_double(r.q025) << ','
            << csv::format_double(r.q975) << '\n';
      }
      break;
    }
  }
}

void write_draws(const std::string& path, const std::vector<std::string>& names, const Eigen::MatrixXd& draws) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::DataError, "cannot write " + path);
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  for (Eigen::Index i = 0; i < draws.rows(); ++i) {
    for (Eigen::Index j = 0; j < draws.cols(); ++j) out << (j ? "," : "") << csv::format_double(draws(i, j));
    out << '\n';
  }
}

DrawFile read_draws(const std::string& path) {
  const csv::Table t = csv::read(path);
  DrawFile f;
  f.names = t.header;
  f.draws.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].size() != t.header.size()) {
      throw Error(ErrorKind::DataError, path + ":" + std::to_string(i + 2) + ": wrong number of fields");
    }
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      const auto v = csv::parse_double(t.rows[i][j]);
      if (!v) {
        throw Error(ErrorKind::DataError, path + ":" + std::to_string(i + 2) + ": column " + t.header[j] +
                                              " is not numeric");
      }
      f.draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *v;
    }
  }
  return f;
}

}  // namespace jointfuse::diagnostics
