#include "deviate/model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace deviate {

DeviatedModel::DeviatedModel(KernelFamily h0_family_in, ParamPoint h0_point_in, KernelFamily f_in, CompactDomain domain_in)
    : h0_family(std::move(h0_family_in)),
      h0_point(std::move(h0_point_in)),
      f(std::move(f_in)),
      domain(std::move(domain_in)) {
  if (h0_family.dim() != f.dim()) throw UsageError("DeviatedModel: h0 and f dimensions differ");
  if (domain.lo.size() != f.dim()) throw UsageError("DeviatedModel: domain dimension differs from f");
  domain.validate();
  PreparedKernel(h0_family, h0_point);  // validates the h0 parameter
}

void DeviatedModel::check(const ParamG& g) const {
  if (!(g.lambda >= 0.0 && g.lambda <= 1.0)) {
    std::ostringstream os;
    os << "lambda=" << g.lambda << " outside [0,1]";
    throw DomainError(os.str());
  }
  if (g.point.mu.size() != dim()) throw UsageError("ParamG: dimension mismatch");
  if (!domain.contains(f.effective(g.point))) throw DomainError("ParamG: (mu, Sigma) outside the compact domain");
}

PreparedModel::PreparedModel(const DeviatedModel& m, const ParamG& g)
    : h0_(m.h0_family, m.h0_point), f_(m.f, g.point), lambda_(g.lambda) {
  m.check(g);
}

double PreparedModel::log_pdf(const Eigen::Ref<const Vector>& x) const {
  const double lh = lambda_ < 1.0 ? std::log1p(-lambda_) + h0_.log_pdf(x) : -std::numeric_limits<double>::infinity();
  const double lf = lambda_ > 0.0 ? std::log(lambda_) + f_.log_pdf(x) : -std::numeric_limits<double>::infinity();
  return std::max(log_add_exp(lh, lf), kLogDensityFloor);
}

double PreparedModel::pdf(const Eigen::Ref<const Vector>& x) const {
  return (1.0 - lambda_) * std::exp(h0_.log_pdf(x)) + lambda_ * std::exp(f_.log_pdf(x));
}

double model_pdf(const DeviatedModel& m, const ParamG& g, const Eigen::Ref<const Vector>& x) {
  return PreparedModel(m, g).pdf(x);
}

double model_log_pdf(const DeviatedModel& m, const ParamG& g, const Eigen::Ref<const Vector>& x) {
  return PreparedModel(m, g).log_pdf(x);
}

std::size_t mixture_log_density(double lambda, const Vector& log_h0, const Vector& log_f, Vector& out) {
  const auto n = log_h0.size();
  out.resize(n);
  std::size_t clamped = 0;
  const double a = lambda < 1.0 ? std::log1p(-lambda) : -std::numeric_limits<double>::infinity();
  const double b = lambda > 0.0 ? std::log(lambda) : -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = log_add_exp(a + log_h0(i), b + log_f(i));
    if (!(v >= kLogDensityFloor)) {
      v = kLogDensityFloor;
      ++clamped;
    }
    out(i) = v;
  }
  return clamped;
}

LogLikelihood log_likelihood_detail(const DeviatedModel& m, const ParamG& g, const Matrix& data) {
  if (data.rows() < 1) throw UsageError("log_likelihood: empty data");
  const PreparedModel pm(m, g);
  Vector lp;
  LogLikelihood out;
  out.clamped = mixture_log_density(g.lambda, pm.h0().log_pdf_rows(data), pm.f().log_pdf_rows(data), lp);
  out.value = lp.sum();
  return out;
}

double log_likelihood(const DeviatedModel& m, const ParamG& g, const Matrix& data) {
  return log_likelihood_detail(m, g, data).value;
}

Dataset sample_model(const DeviatedModel& m, const ParamG& g, Eigen::Index n, RngStream& rng) {
  if (n < 1) throw UsageError("sample_model: n must be at least 1");
  m.check(g);
  std::vector<bool> labels(static_cast<std::size_t>(n));
  Eigen::Index n_f = 0;
  for (auto&& l : labels) {
    l = rng.uniform() < g.lambda;
    n_f += l ? 1 : 0;
  }
  RngStream h0_stream = rng.split(0);
  RngStream f_stream = rng.split(1);
  Matrix from_h0 = n - n_f > 0 ? sample(m.h0_family, m.h0_point, n - n_f, h0_stream) : Matrix(0, m.dim());
  Matrix from_f = n_f > 0 ? sample(m.f, g.point, n_f, f_stream) : Matrix(0, m.dim());
  Dataset ds;
  ds.data.resize(n, m.dim());
  Eigen::Index ih = 0, jf = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    ds.data.row(i) = labels[static_cast<std::size_t>(i)] ? from_f.row(jf++) : from_h0.row(ih++);
  }
  ds.labels = std::move(labels);
  return ds;
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto d = ds.data.cols();
  for (Eigen::Index j = 0; j < d; ++j) out << (j ? "," : "") << "x" << (j + 1);
  if (ds.labels) out << ",label";
  out << "\n";
  char buf[32];
  for (Eigen::Index i = 0; i < ds.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      auto res = std::to_chars(buf, buf + sizeof(buf), ds.data(i, j));
      out << (j ? "," : "") << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    if (ds.labels) out << "," << ((*ds.labels)[static_cast<std::size_t>(i)] ? 1 : 0);
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw UsageError("dataset line " + std::to_string(line_no) + ": cannot parse '" + s + "'");
  }
  return v;
}

}  // namespace

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw UsageError("dataset " + path.string() + " is empty");
  const auto header = split_csv(line);
  std::size_t d = 0;
  bool has_label = false;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == "x" + std::to_string(j + 1)) {
      if (has_label) throw UsageError("dataset header: label must be the last column");
      ++d;
    } else if (header[j] == "label" && j + 1 == header.size()) {
      has_label = true;
    } else {
      throw UsageError("dataset header: unexpected column '" + header[j] + "'");
    }
  }
  if (d == 0) throw UsageError("dataset header: no x columns");
  std::vector<double> values;
  std::vector<bool> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw UsageError("dataset line " + std::to_string(line_no) + ": wrong column count");
    for (std::size_t j = 0; j < d; ++j) values.push_back(parse_double(cells[j], line_no));
    if (has_label) labels.push_back(cells[d] == "1" || cells[d] == "true");
  }
  const auto n = static_cast<Eigen::Index>(values.size() / d);
  if (n == 0) throw UsageError("dataset " + path.string() + " has no rows");
  Dataset ds;
  ds.data = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), n, static_cast<Eigen::Index>(d));
  if (has_label) ds.labels = std::move(labels);
  return ds;
}

}  // namespace deviate
