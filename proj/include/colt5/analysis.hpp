// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Routing-pattern statistics over recorded traces: which token categories the
// routers prefer, how strongly the three routers in a layer agree, and a
// token-level heat report. Proportions use hard selection (an index appears
// in the selected list); correlations use the full soft weight vectors.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colt5/errors.hpp"
#include "colt5/model.hpp"
#include "colt5/tasks.hpp"

namespace colt5 {

// Router and category axis order used by every report.
inline const std::array<std::string, 3>& router_names() {
  static const std::array<std::string, 3> names{"ffn", "query", "kv"};
  return names;
}
inline const std::array<std::string, 3>& category_names() {
  static const std::array<std::string, 3> names{"question", "answer", "other"};
  return names;
}

using ProportionCell = std::array<std::array<double, 3>, 3>;  // [router][category]

struct ProportionReport {
  // Mean fraction of each category's tokens that were hard-selected,
  // averaged over examples first, then over layers.
  ProportionCell mean{};
  // Optional per-layer breakdown (examples averaged, layers kept apart).
  std::vector<ProportionCell> per_layer;
};

struct PairStat {
  double r = 0.0;
  bool degenerate = false;  // some example had a zero-variance weight vector
};

struct CorrelationReport {
  // Per layer: Pearson r for the pairs (ffn,kv), (ffn,query), (kv,query),
  // averaged over examples.
  std::vector<std::array<PairStat, 3>> layers;
};

inline const std::array<std::string, 3>& pair_names() {
  static const std::array<std::string, 3> names{"ffn_kv", "ffn_query", "kv_query"};
  return names;
}

namespace detail {

inline const RouterRecord& router_by_index(const LayerTrace& layer, std::size_t r) {
  switch (r) {
    case 0: return layer.ffn;
    case 1: return layer.query;
    default: return layer.kv;
  }
}

}  // namespace detail

/// Fraction of each label category that each router hard-selects. For every
/// (layer, router, category): per-example fraction, averaged over the
/// examples that contain the category at all, then averaged over layers for
/// the flat report.
inline ProportionReport routed_proportion(const std::vector<RoutingTrace>& traces,
                                          const std::vector<std::vector<int>>& labels,
                                          bool per_layer = false) {
  if (traces.empty()) throw ContractError("routed_proportion: no traces");
  if (traces.size() != labels.size()) {
    throw ContractError("routed_proportion: " + std::to_string(traces.size()) + " traces vs " +
                        std::to_string(labels.size()) + " label rows");
  }
  const std::size_t num_layers = traces[0].layers.size();
  // sums[l][r][c] accumulates per-example fractions; counts the examples that
  // actually contain category c.
  std::vector<ProportionCell> sums(num_layers, ProportionCell{});
  std::vector<std::array<std::size_t, 3>> counts(num_layers, {0, 0, 0});

  for (std::size_t e = 0; e < traces.size(); ++e) {
    const RoutingTrace& trace = traces[e];
    if (trace.layers.size() != num_layers) {
      throw ContractError("routed_proportion: trace " + std::to_string(e) +
                          " has a different layer count");
    }
    if (trace.n != labels[e].size()) {
      throw ContractError("routed_proportion: trace " + std::to_string(e) + " covers " +
                          std::to_string(trace.n) + " tokens but has " +
                          std::to_string(labels[e].size()) + " labels");
    }
    std::array<std::size_t, 3> total{0, 0, 0};
    for (int l : labels[e]) {
      if (l < 0 || l > 2) throw ContractError("routed_proportion: label outside {0, 1, 2}");
      ++total[static_cast<std::size_t>(l)];
    }
    for (std::size_t l = 0; l < num_layers; ++l) {
      for (std::size_t r = 0; r < 3; ++r) {
        const RouterRecord& rec = detail::router_by_index(trace.layers[l], r);
        std::array<std::size_t, 3> hit{0, 0, 0};
        for (int i : rec.selected) {
          if (i < 0 || static_cast<std::size_t>(i) >= trace.n) {
            throw ContractError("routed_proportion: selected index out of range");
          }
          ++hit[static_cast<std::size_t>(labels[e][static_cast<std::size_t>(i)])];
        }
        for (std::size_t c = 0; c < 3; ++c) {
          if (total[c] == 0) continue;
          sums[l][r][c] += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
          if (r == 0) ++counts[l][c];  // same example set for every router
        }
      }
    }
  }

  ProportionReport report;
  if (per_layer) report.per_layer.assign(num_layers, ProportionCell{});
  std::array<std::array<double, 3>, 3> layer_means{};
  std::array<std::array<std::size_t, 3>, 3> layer_counts{};
  for (std::size_t l = 0; l < num_layers; ++l) {
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        if (counts[l][c] == 0) continue;
        const double mean = sums[l][r][c] / static_cast<double>(counts[l][c]);
        if (per_layer) report.per_layer[l][r][c] = mean;
        layer_means[r][c] += mean;
        ++layer_counts[r][c];
      }
    }
  }
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      report.mean[r][c] =
          layer_counts[r][c] == 0 ? 0.0 : layer_means[r][c] / static_cast<double>(layer_counts[r][c]);
    }
  }
  return report;
}

namespace detail {

/// Pearson r over two equal-length vectors; zero variance on either side is
/// reported as r = 0 with the degenerate flag.
inline PairStat pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {sxy / std::sqrt(sxx * syy), false};
}

}  // namespace detail

/// Per-layer Pearson correlation between the soft routing-weight vectors of
/// each router pair, averaged over examples.
inline CorrelationReport router_correlation(const std::vector<RoutingTrace>& traces) {
  if (traces.empty()) throw ContractError("router_correlation: no traces");
  const std::size_t num_layers = traces[0].layers.size();
  static constexpr std::array<std::array<std::size_t, 2>, 3> kPairs{{{0, 2}, {0, 1}, {2, 1}}};

  CorrelationReport report;
  report.layers.assign(num_layers, {});
  std::vector<std::array<std::size_t, 3>> counts(num_layers, {0, 0, 0});
  for (const RoutingTrace& trace : traces) {
    if (trace.n < 2) throw ContractError("router_correlation: needs n >= 2");
    if (trace.layers.size() != num_layers) {
      throw ContractError("router_correlation: traces disagree on layer count");
    }
    for (std::size_t l = 0; l < num_layers; ++l) {
      for (std::size_t p = 0; p < 3; ++p) {
        const RouterRecord& a = detail::router_by_index(trace.layers[l], kPairs[p][0]);
        const RouterRecord& b = detail::router_by_index(trace.layers[l], kPairs[p][1]);
        if (a.weights.size() != trace.n || b.weights.size() != trace.n) {
          throw ContractError("router_correlation: weight vector length mismatch");
        }
        const PairStat stat = detail::pearson(a.weights, b.weights);
        report.layers[l][p].r += stat.r;
        report.layers[l][p].degenerate |= stat.degenerate;
        ++counts[l][p];
      }
    }
  }
  for (std::size_t l = 0; l < num_layers; ++l) {
    for (std::size_t p = 0; p < 3; ++p) {
      report.layers[l][p].r /= static_cast<double>(counts[l][p]);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json proportion_report_json(const ProportionReport& report) {
  nlohmann::json j;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      j["mean"][router_names()[r]][category_names()[c]] = report.mean[r][c];
    }
  }
  if (!report.per_layer.empty()) {
    j["per_layer"] = nlohmann::json::array();
    for (const auto& cell : report.per_layer) {
      nlohmann::json lj;
      for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
          lj[router_names()[r]][category_names()[c]] = cell[r][c];
        }
      }
      j["per_layer"].push_back(std::move(lj));
    }
  }
  return j;
}

inline std::string proportion_report_csv(const ProportionReport& report) {
  std::ostringstream out;
  out << "layer,router,question,answer,other\n";
  auto row = [&](const std::string& layer, const ProportionCell& cell) {
    for (std::size_t r = 0; r < 3; ++r) {
      out << layer << ',' << router_names()[r];
      for (std::size_t c = 0; c < 3; ++c) out << ',' << cell[r][c];
      out << '\n';
    }
  };
  row("mean", report.mean);
  for (std::size_t l = 0; l < report.per_layer.size(); ++l) {
    row(std::to_string(l), report.per_layer[l]);
  }
  return out.str();
}

inline nlohmann::json correlation_report_json(const CorrelationReport& report) {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const auto& layer : report.layers) {
    nlohmann::json lj;
    for (std::size_t p = 0; p < 3; ++p) {
      lj[pair_names()[p]] = {{"r", layer[p].r}, {"degenerate", layer[p].degenerate}};
    }
    j["layers"].push_back(std::move(lj));
  }
  return j;
}

inline std::string correlation_report_csv(const CorrelationReport& report) {
  std::ostringstream out;
  out << "layer,ffn_kv,ffn_query,kv_query\n";
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    out << l;
    for (std::size_t p = 0; p < 3; ++p) out << ',' << report.layers[l][p].r;
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Token heat report
// ---------------------------------------------------------------------------

/// One self-contained HTML page: each token tinted by the chosen router's
/// soft weights, with up to three layers mapped to the cyan, magenta, and
/// yellow channels. Weights (2 decimals) ride along in a data-w attribute so
/// the report is machine-recoverable.
inline std::string render_token_heat(const RoutingTrace& trace, const std::vector<int>& tokens,
                                     const std::vector<std::size_t>& layer_ids,
                                     const std::string& router = "ffn") {
  if (layer_ids.empty() || layer_ids.size() > 3) {
    throw ContractError("render_token_heat: color mode maps 1 to 3 layers, got " +
                        std::to_string(layer_ids.size()));
  }
  for (std::size_t l : layer_ids) {
    if (l >= trace.layers.size()) {
      throw IndexError("render_token_heat: layer " + std::to_string(l) + " out of range [0, " +
                       std::to_string(trace.layers.size()) + ")");
    }
  }
  if (tokens.size() != trace.n) {
    throw ContractError("render_token_heat: " + std::to_string(tokens.size()) +
                        " tokens for a trace over " + std::to_string(trace.n));
  }
  static const std::array<std::string, 3> kChannel{"cyan", "magenta", "yellow"};

  std::ostringstream out;
  out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
      << "<title>routing heat</title></head>\n"
      << "<body style=\"font-family:monospace;line-height:1.8\">\n<p>router: " << router;
  for (std::size_t i = 0; i < layer_ids.size(); ++i) {
    out << " | " << kChannel[i] << " = layer " << layer_ids[i];
  }
  out << "</p>\n<p>\n";
  char buf[16];
  for (std::size_t t = 0; t < trace.n; ++t) {
    double cmy[3] = {0.0, 0.0, 0.0};
    std::string data;
    for (std::size_t i = 0; i < layer_ids.size(); ++i) {
      const RouterRecord& rec = trace.layers[layer_ids[i]].router(router);
      const double w = std::min(1.0, std::max(0.0, rec.weights[t]));
      cmy[i] = w;
      std::snprintf(buf, sizeof buf, "%.2f", w);
      if (!data.empty()) data += ',';
      data += buf;
    }
    const int red = static_cast<int>(std::lround(255.0 * (1.0 - cmy[0])));
    const int green = static_cast<int>(std::lround(255.0 * (1.0 - cmy[1])));
    const int blue = static_cast<int>(std::lround(255.0 * (1.0 - cmy[2])));
    out << "<span data-w=\"" << data << "\" style=\"background-color:rgb(" << red << ',' << green
        << ',' << blue << ")\">t" << tokens[t] << "</span> ";
    if ((t + 1) % 16 == 0) out << "\n";
  }
  out << "</p>\n</body></html>\n";
  return out.str();
}

/// Recovers the per-token weights from a heat report (inverse of the data-w
/// annotation, to 2 decimals).
inline std::vector<std::vector<double>> parse_token_heat(const std::string& html) {
  std::vector<std::vector<double>> out;
  const std::string key = "data-w=\"";
  std::size_t pos = 0;
  while ((pos = html.find(key, pos)) != std::string::npos) {
    pos += key.size();
    const std::size_t end = html.find('"', pos);
    if (end == std::string::npos) throw ParseError("heat report: unterminated data-w attribute");
    std::vector<double> weights;
    std::istringstream cell(html.substr(pos, end - pos));
    std::string piece;
    while (std::getline(cell, piece, ',')) weights.push_back(std::stod(piece));
    out.push_back(std::move(weights));
    pos = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace files (line-delimited JSON, one record per example)
// ---------------------------------------------------------------------------

inline nlohmann::json routing_trace_to_json(const RoutingTrace& trace,
                                            const std::vector<int>& labels,
                                            const std::vector<int>& tokens = {}) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : trace.layers) {
    nlohmann::json lj;
    for (std::size_t r = 0; r < 3; ++r) {
      const RouterRecord& rec = detail::router_by_index(layer, r);
      lj[router_names()[r]] = {{"selected", rec.selected},
                               {"weights", rec.weights},
                               {"lambda", rec.lambda},
                               {"full", rec.full},
                               {"k", rec.k_target}};
    }
    layers.push_back(std::move(lj));
  }
  return nlohmann::json{
      {"n", trace.n}, {"tokens", tokens}, {"labels", labels}, {"layers", std::move(layers)}};
}

struct TraceRecord {
  RoutingTrace trace;
  std::vector<int> labels;
  std::vector<int> tokens;
};

inline TraceRecord routing_trace_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("n") || !j.contains("labels") || !j.contains("layers")) {
    throw ParseError("trace record: expected an object with n, labels, layers");
  }
  TraceRecord rec;
  try {
    rec.trace.n = j.at("n").get<std::size_t>();
    rec.labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("tokens")) rec.tokens = j.at("tokens").get<std::vector<int>>();
    for (const auto& lj : j.at("layers")) {
      LayerTrace layer;
      for (std::size_t r = 0; r < 3; ++r) {
        const auto& rj = lj.at(router_names()[r]);
        RouterRecord rr;
        rr.selected = rj.at("selected").get<std::vector<int>>();
        rr.weights = rj.at("weights").get<std::vector<double>>();
        rr.lambda = rj.at("lambda").get<double>();
        rr.full = rj.at("full").get<bool>();
        rr.k_target = rj.at("k").get<std::size_t>();
        (r == 0 ? layer.ffn : r == 1 ? layer.query : layer.kv) = std::move(rr);
      }
      rec.trace.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("trace record: ") + e.what());
  }
  return rec;
}

inline void write_traces(const std::vector<RoutingTrace>& traces,
                         const std::vector<std::vector<int>>& labels, const std::string& path,
                         const std::vector<std::vector<int>>& tokens = {}) {
  if (traces.size() != labels.size()) {
    throw ContractError("write_traces: trace/label count mismatch");
  }
  if (!tokens.empty() && tokens.size() != traces.size()) {
    throw ContractError("write_traces: trace/token count mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < traces.size(); ++i) {
    out << routing_trace_to_json(traces[i], labels[i], tokens.empty() ? std::vector<int>{} : tokens[i])
               .dump()
        << '\n';
  }
  if (!out) throw PathError("write to '" + path + "' failed");
}

inline std::vector<TraceRecord> read_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot open '" + path + "' for reading");
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(routing_trace_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace colt5
