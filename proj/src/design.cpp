#include "ctm/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ctm/errors.hpp"

namespace ctm {

// ---------------------------------------------------------------------------
// DataSet

bool DataSet::has_column(const std::string& name) const {
  return std::any_of(columns.begin(), columns.end(), [&](const Column& c) { return c.name == name; });
}

const Column& DataSet::column(const std::string& name) const {
  for (const auto& c : columns)
    if (c.name == name) return c;
  throw ConfigError("unknown column '" + name + "'");
}

Column& DataSet::add_column(std::string name, std::vector<double> values) {
  columns.push_back(Column{std::move(name), std::move(values), {}});
  return columns.back();
}

DataSet DataSet::permuted(const std::vector<std::size_t>& order) const {
  DataSet out;
  out.columns = columns;
  for (auto& c : out.columns) c.values.clear();
  for (std::size_t i : order) {
    out.time.push_back(time[i]);
    out.status.push_back(status[i]);
    out.treatment.push_back(treatment[i]);
    for (std::size_t k = 0; k < columns.size(); ++k) out.columns[k].values.push_back(columns[k].values[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ModelSpec

void ModelSpec::validate(const std::vector<std::string>& instruments) const {
  int monotone = 0, treatment = 0;
  for (const auto& t : outcome) {
    if (t.kind == TermKind::monotone) ++monotone;
    if (t.kind == TermKind::treatment) ++treatment;
    if (std::find(instruments.begin(), instruments.end(), t.covariate) != instruments.end() &&
        t.kind != TermKind::treatment) {
      throw ConfigError("instrument '" + t.covariate + "' must not enter the outcome equation");
    }
  }
  if (monotone != 1) throw ConfigError("outcome equation needs exactly one monotone time term");
  if (treatment != 1) throw ConfigError("outcome equation needs exactly one treatment term");
  for (const auto& t : selection) {
    if (t.kind == TermKind::monotone || t.kind == TermKind::treatment || t.kind == TermKind::interaction) {
      throw ConfigError(std::string("selection equation cannot contain a ") + to_string(t.kind) + " term");
    }
  }
}

// ---------------------------------------------------------------------------
// Layout

Eigen::VectorXd ParameterLayout::E(const Eigen::VectorXd& delta) const {
  Eigen::VectorXd e = Eigen::VectorXd::Ones(delta.size());
  for (int j = 1; j < monotone_size; ++j) e[monotone_offset + j] = std::exp(delta[monotone_offset + j]);
  return e;
}

Eigen::VectorXd ParameterLayout::E_bar(const Eigen::VectorXd& delta) const {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(delta.size());
  for (int j = 1; j < monotone_size; ++j) e[monotone_offset + j] = std::exp(delta[monotone_offset + j]);
  return e;
}

Eigen::VectorXd ParameterLayout::linear(const Eigen::VectorXd& delta) const {
  Eigen::VectorXd out = delta;
  for (int j = 1; j < monotone_size; ++j) out[monotone_offset + j] = std::exp(delta[monotone_offset + j]);
  return out;
}

const TermBlock* ParameterLayout::find(const std::string& label) const {
  for (const auto& t : terms)
    if (t.label == label) return &t;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Bundle

int DesignBundle::zeta() const {
  int z = 0;
  for (const auto& p : penalties) z += p.rank;
  return z;
}

Eigen::MatrixXd DesignBundle::penalty_matrix(const Eigen::VectorXd& lambda) const {
  const int psi = layout.psi();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(psi, psi);
  for (std::size_t k = 0; k < penalties.size(); ++k) {
    const auto& p = penalties[k];
    s.block(p.offset, p.offset, p.size, p.size) += lambda[static_cast<Eigen::Index>(k)] * p.matrix;
  }
  return s;
}

Eigen::RowVectorXd DesignBundle::outcome_row(std::size_t i, double t, int d) const {
  Eigen::RowVectorXd row = X_tilde.row(static_cast<Eigen::Index>(i));
  row.segment(layout.monotone_offset, layout.monotone_size) = monotone->cumulative_row(t);
  row[treatment_column] = d;
  for (const auto& inter : interactions) row[inter.column] = d * inter.modifier[i];
  return row;
}

Eigen::MatrixXd DesignBundle::outcome_rows(double t, int d) const {
  Eigen::MatrixXd out = X_tilde;
  const Eigen::RowVectorXd time_row = monotone->cumulative_row(t);
  out.middleCols(layout.monotone_offset, layout.monotone_size).rowwise() = time_row;
  out.col(treatment_column).setConstant(d);
  for (const auto& inter : interactions) {
    for (std::size_t i = 0; i < rows(); ++i) out(static_cast<Eigen::Index>(i), inter.column) = d * inter.modifier[i];
  }
  return out;
}

namespace {

struct BlockBuild {
  TermBlock block;
  Eigen::MatrixXd design;
  Eigen::MatrixXd design_dy;  // empty unless monotone
  Eigen::MatrixXd penalty;    // empty if unpenalized
  int penalty_rank = 0;
  std::vector<int> unpenalized;  // local columns with zero penalty rows
  std::vector<double> modifier;  // interactions only
};

std::vector<double> checked_values(const DataSet& data, const std::string& name) {
  const Column& c = data.column(name);
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    if (!std::isfinite(c.values[i])) {
      throw ConfigError("column '" + name + "' has a missing value at row " + std::to_string(i + 1));
    }
  }
  return c.values;
}

// Numeric column -> one column; categorical -> one indicator per non-reference level.
Eigen::MatrixXd parametric_columns(const DataSet& data, const std::string& name, std::vector<std::string>& labels) {
  const Column& c = data.column(name);
  const std::vector<double> v = checked_values(data, name);
  const auto n = static_cast<Eigen::Index>(v.size());
  if (!c.categorical() || c.levels.size() <= 2) {
    Eigen::MatrixXd m(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) m(i, 0) = v[static_cast<std::size_t>(i)];
    labels.push_back(c.categorical() ? name + ":" + c.levels.back() : name);
    return m;
  }
  const auto levels = static_cast<Eigen::Index>(c.levels.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, levels - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto level = static_cast<Eigen::Index>(v[static_cast<std::size_t>(i)]);
    if (level > 0) m(i, level - 1) = 1.0;
  }
  for (std::size_t l = 1; l < c.levels.size(); ++l) labels.push_back(name + ":" + c.levels[l]);
  return m;
}

BlockBuild build_block(const TermSpec& t, Equation eq, const DataSet& data, std::optional<MonotoneTerm>& monotone) {
  const auto n = static_cast<Eigen::Index>(data.size());
  BlockBuild b;
  b.block.equation = eq;
  b.block.kind = t.kind;
  switch (t.kind) {
    case TermKind::monotone: {
      monotone.emplace(data.time, t.basis_dim);
      const double step = monotone->default_step();
      b.design.resize(n, t.basis_dim);
      b.design_dy.resize(n, t.basis_dim);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double y = data.time[static_cast<std::size_t>(i)];
        b.design.row(i) = monotone->cumulative_row(y);
        b.design_dy.row(i) = monotone->cumulative_row_dy(y, step);
      }
      b.penalty = monotone->reparam().penalty;
      b.penalty_rank = t.basis_dim - 2;
      b.unpenalized = {0};
      b.block.label = "s(" + (t.covariate.empty() ? std::string("time") : t.covariate) + ")";
      for (int j = 0; j < t.basis_dim; ++j) b.block.column_labels.push_back(b.block.label + "." + std::to_string(j + 1));
      break;
    }
    case TermKind::parametric: {
      b.design = parametric_columns(data, t.covariate, b.block.column_labels);
      b.block.label = t.covariate;
      for (int j = 0; j < b.design.cols(); ++j) b.unpenalized.push_back(j);
      break;
    }
    case TermKind::smooth: {
      const std::vector<double> v = checked_values(data, t.covariate);
      const ThinPlateSmooth smooth(v, t.basis_dim);
      TermBasis basis = smooth.basis(v);
      b.design = std::move(basis.design);
      b.penalty = std::move(basis.penalty);
      b.penalty_rank = basis.penalty_rank;
      b.unpenalized = {static_cast<int>(b.design.cols()) - 1};
      b.block.label = "s(" + t.covariate + ")";
      for (int j = 0; j < b.design.cols(); ++j) b.block.column_labels.push_back(b.block.label + "." + std::to_string(j + 1));
      break;
    }
    case TermKind::ridge: {
      const std::vector<double> v = checked_values(data, t.covariate);
      TermBasis basis;
      try {
        basis = build_ridge_term(v);
      } catch (const ConfigError& e) {
        throw ConfigError("term '" + t.covariate + "': " + e.what());
      }
      b.design = std::move(basis.design);
      b.penalty = std::move(basis.penalty);
      b.penalty_rank = basis.penalty_rank;
      b.block.label = "s(" + t.covariate + ",re)";
      for (const auto& l : basis.column_labels) b.block.column_labels.push_back(t.covariate + ":" + l);
      break;
    }
    case TermKind::treatment: {
      b.design.resize(n, 1);
      for (Eigen::Index i = 0; i < n; ++i) b.design(i, 0) = data.treatment[static_cast<std::size_t>(i)];
      b.block.label = "treatment";
      b.block.column_labels = {"treatment"};
      b.unpenalized = {0};
      break;
    }
    case TermKind::interaction: {
      std::vector<std::string> labels;
      const Eigen::MatrixXd mod = parametric_columns(data, t.covariate, labels);
      if (mod.cols() != 1) throw ConfigError("interaction modifier '" + t.covariate + "' must be numeric or binary");
      b.design.resize(n, 1);
      b.modifier.resize(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        b.modifier[static_cast<std::size_t>(i)] = mod(i, 0);
        b.design(i, 0) = data.treatment[static_cast<std::size_t>(i)] * mod(i, 0);
      }
      b.block.label = "treatment:" + t.covariate;
      b.block.column_labels = {b.block.label};
      b.unpenalized = {0};
      break;
    }
  }
  b.block.size = static_cast<int>(b.design.cols());
  return b;
}

// Throws when the unpenalized columns of one equation are linearly dependent.
void check_identifiable(const std::vector<BlockBuild>& blocks, Eigen::Index n, const char* equation) {
  Eigen::MatrixXd acc(n, 0);
  std::vector<std::string> owners;
  int rank = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    for (int local : blocks[k].unpenalized) {
      acc.conservativeResize(Eigen::NoChange, acc.cols() + 1);
      acc.col(acc.cols() - 1) = blocks[k].design.col(local);
      owners.push_back(blocks[k].block.label);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(acc);
      qr.setThreshold(1e-10);
      if (static_cast<int>(qr.rank()) == rank) {
        std::string msg = std::string("rank-deficient unpenalized block in the ") + equation + " equation: '" +
                          blocks[k].block.label + "' is collinear with";
        std::set<std::string> others(owners.begin(), owners.end() - 1);
        if (others.empty()) msg += " the zero vector";
        for (const auto& o : others) msg += " '" + o + "'";
        throw ConfigError(msg);
      }
      rank = static_cast<int>(qr.rank());
    }
  }
}

}  // namespace

DesignBundle assemble(const ModelSpec& spec, const DataSet& data) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(data.size());
  if (n == 0) throw ConfigError("empty data set");
  if (data.status.size() != data.size() || data.treatment.size() != data.size()) {
    throw ConfigError("data set columns have inconsistent lengths");
  }

  DesignBundle out;
  out.status = data.status;
  out.treatment = data.treatment;
  out.time = data.time;

  std::vector<BlockBuild> outcome, selection;
  for (const auto& t : spec.outcome) outcome.push_back(build_block(t, Equation::outcome, data, out.monotone));

  BlockBuild intercept;
  intercept.block = {"(Intercept)", Equation::selection, TermKind::parametric, 0, 1, -1, {"(Intercept)"}};
  intercept.design = Eigen::MatrixXd::Ones(n, 1);
  intercept.unpenalized = {0};
  selection.push_back(std::move(intercept));
  for (const auto& t : spec.selection) selection.push_back(build_block(t, Equation::selection, data, out.monotone));

  auto width = [](const std::vector<BlockBuild>& bs) {
    int w = 0;
    for (const auto& b : bs) w += b.block.size;
    return w;
  };
  out.layout.outcome_size = width(outcome);
  out.layout.selection_size = width(selection);
  out.X_tilde.resize(n, out.layout.outcome_size);
  out.X_tilde_prime = Eigen::MatrixXd::Zero(n, out.layout.outcome_size);
  out.Z.resize(n, out.layout.selection_size);

  auto place = [&](std::vector<BlockBuild>& blocks, int base, Eigen::MatrixXd& target, const char* name) {
    int col = 0;
    for (auto& b : blocks) {
      b.block.offset = base + col;
      target.middleCols(col, b.block.size) = b.design;
      if (b.block.kind == TermKind::monotone) {
        out.X_tilde_prime.middleCols(col, b.block.size) = b.design_dy;
        out.layout.monotone_offset = b.block.offset;
        out.layout.monotone_size = b.block.size;
      }
      if (b.block.kind == TermKind::treatment) out.treatment_column = col;
      if (b.block.kind == TermKind::interaction) out.interactions.push_back({col, b.modifier});
      if (b.penalty.size() > 0) {
        b.block.penalty = static_cast<int>(out.penalties.size());
        out.penalties.push_back({b.block.label, b.block.offset, b.block.size, b.penalty, b.penalty_rank});
      }
      out.layout.terms.push_back(b.block);
      col += b.block.size;
    }
    check_identifiable(blocks, n, name);
  };
  place(outcome, 0, out.X_tilde, "outcome");
  place(selection, out.layout.outcome_size, out.Z, "selection");
  out.fd_step = out.monotone->default_step();
  return out;
}

Eigen::VectorXd eta1(const DesignBundle& bundle, const Eigen::VectorXd& beta1_working) {
  if (beta1_working.size() != bundle.layout.outcome_size) throw ConfigError("eta1: coefficient dimension mismatch");
  Eigen::VectorXd lin = beta1_working;
  const int off = bundle.layout.monotone_offset;
  for (int j = 1; j < bundle.layout.monotone_size; ++j) lin[off + j] = std::exp(beta1_working[off + j]);
  return bundle.X_tilde * lin;
}

Eigen::VectorXd eta2(const DesignBundle& bundle, const Eigen::VectorXd& beta2) {
  if (beta2.size() != bundle.layout.selection_size) throw ConfigError("eta2: coefficient dimension mismatch");
  return bundle.Z * beta2;
}

Eigen::VectorXd deta1_dy(const DesignBundle& bundle, const Eigen::VectorXd& beta1_working, double step) {
  if (beta1_working.size() != bundle.layout.outcome_size) throw ConfigError("deta1_dy: coefficient dimension mismatch");
  const int off = bundle.layout.monotone_offset;
  const int size = bundle.layout.monotone_size;
  const Eigen::VectorXd inc = bundle.monotone->reparam().increments(beta1_working.segment(off, size));
  if (step <= 0.0 || step == bundle.fd_step) return bundle.X_tilde_prime.middleCols(off, size) * inc;
  Eigen::VectorXd out(static_cast<Eigen::Index>(bundle.rows()));
  for (std::size_t i = 0; i < bundle.rows(); ++i) {
    out[static_cast<Eigen::Index>(i)] = bundle.monotone->cumulative_row_dy(bundle.time[i], step).dot(inc);
  }
  return out;
}

}  // namespace ctm
