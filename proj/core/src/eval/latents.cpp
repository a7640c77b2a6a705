#include "muser/eval/latents.hpp"

#include <Eigen/Dense>
#include <sstream>

#include "muser/error.hpp"
#include "muser/eval/silhouette.hpp"
#include "muser/pipeline/model.hpp"

namespace muser::eval {

std::string LatentDump::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "piece,emotion,element";
  for (std::size_t k = 0; k < slice_width; ++k) os << ",z" << k;
  os << '\n';
  for (const auto& r : rows) {
    os << r.piece << ',' << repr::emotion_name(r.emotion) << ',' << repr::short_name(r.element);
    for (double v : r.values) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

LatentDump export_latents(pipeline::MuserModel& model, const std::vector<std::string>& ids,
                          std::span<const repr::CpSequence> corpus) {
  if (corpus.empty()) throw DataError("export_latents: empty corpus");
  if (ids.size() != corpus.size()) throw UsageError("export_latents: ids/corpus count mismatch");
  const auto slicing = model.slicing();
  LatentDump dump;
  dump.slice_width = slicing.width;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto z = model.encode(model.make_batch(corpus.subspan(i, 1))).z_q;
    for (auto e : repr::kElements) {
      LatentRow row{ids[i], corpus[i].emotion, e, std::vector<double>(slicing.width, 0.0)};
      const std::size_t b = slicing.begin(e);
      for (std::size_t t = 0; t < z.rows(); ++t)
        for (std::size_t k = 0; k < slicing.width; ++k) row.values[k] += z.at(t, b + k);
      for (double& v : row.values) v /= static_cast<double>(z.rows());
      dump.rows.push_back(std::move(row));
    }
  }
  return dump;
}

std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& points) {
  if (points.empty()) throw DataError("pca: no points");
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto d = static_cast<Eigen::Index>(points[0].size());
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(points[static_cast<std::size_t>(i)].size()) != d) {
      throw UsageError("pca: points differ in dimension");
    }
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = points[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  X.rowwise() -= X.colwise().mean();
  const Eigen::MatrixXd C = X.transpose() * X / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
  // Eigenvalues ascend; take the last two columns.
  std::vector<std::array<double, 2>> out(points.size(), {0.0, 0.0});
  for (int c = 0; c < 2 && c < d; ++c) {
    const Eigen::VectorXd axis = eig.eigenvectors().col(d - 1 - c);
    const Eigen::VectorXd proj = X * axis;
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = proj(i);
  }
  return out;
}

std::vector<QuadrantSilhouette> quadrant_silhouettes(const LatentDump& dump) {
  std::vector<QuadrantSilhouette> out;
  const repr::Emotion quads[] = {repr::Emotion::q1, repr::Emotion::q2, repr::Emotion::q3, repr::Emotion::q4};
  for (auto e : repr::kElements) {
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        std::vector<std::vector<double>> pts;
        std::vector<int> labels;
        for (const auto& r : dump.rows) {
          if (r.element != e) continue;
          if (r.emotion == quads[a] || r.emotion == quads[b]) {
            pts.push_back(r.values);
            labels.push_back(static_cast<int>(r.emotion));
          }
        }
        const auto first = std::count(labels.begin(), labels.end(), static_cast<int>(quads[a]));
        if (first == 0 || first == static_cast<long>(labels.size())) continue;
        out.push_back({e, quads[a], quads[b], silhouette(pts, labels), pts.size()});
      }
    }
  }
  return out;
}

std::vector<ElementHistogram> element_distribution(std::span<const repr::CpSequence> corpus) {
  std::map<std::pair<std::size_t, int>, ElementHistogram> acc;
  for (const auto& seq : corpus) {
    for (auto e : repr::kElements) {
      auto& h = acc[{repr::index_of(e), static_cast<int>(seq.emotion)}];
      h.element = e;
      h.emotion = seq.emotion;
      for (const auto& tok : seq.tokens) {
        const auto v = tok[e];
        if (e != repr::TokenType::family && v == repr::kEmpty) continue;
        ++h.counts[v];
      }
    }
  }
  std::vector<ElementHistogram> out;
  for (auto& [k, h] : acc) out.push_back(std::move(h));
  return out;
}

std::string histogram_csv(const std::vector<ElementHistogram>& histograms) {
  std::ostringstream os;
  os << "element,emotion,index,count\n";
  for (const auto& h : histograms) {
    for (const auto& [idx, n] : h.counts) {
      os << repr::short_name(h.element) << ',' << repr::emotion_name(h.emotion) << ',' << idx << ',' << n << '\n';
    }
  }
  return os.str();
}

}  // namespace muser::eval
