#pragma once

// Checkpoint format "triggerlab-checkpoint v1": versioned text, exact
// round-trip (every double is written with 17 significant digits).
//
//   triggerlab-checkpoint v1
//   N N_trg L D
//   <D rows of W_KQ, D space-separated entries each>
//   <N rows of W_V, D space-separated entries each>

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "triggerlab/linalg.hpp"
#include "triggerlab/model.hpp"

namespace triggerlab {

inline void serialize_checkpoint(std::ostream& out, const ModelParams& params) {
  params.validate();
  out << "triggerlab-checkpoint v1\n";
  out << params.N << " " << params.N_trg << " " << params.L << " "
      << params.D() << "\n";
  const auto write_matrix = [&out](const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j > 0) out << " ";
        out << format_double(m(i, j));
      }
      out << "\n";
    }
  };
  write_matrix(params.W_KQ);
  write_matrix(params.W_V);
}

inline void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  serialize_checkpoint(out, params);
  if (!out) throw std::runtime_error("save_checkpoint: write failed " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string magic, version;
  in >> magic >> version;
  if (magic != "triggerlab-checkpoint" || version != "v1")
    throw std::runtime_error("load_checkpoint: unrecognized header in " + path);
  ModelParams params;
  int D = 0;
  in >> params.N >> params.N_trg >> params.L >> D;
  if (!in || D != params.L + 2 * params.N)
    throw std::runtime_error("load_checkpoint: inconsistent dimensions in " +
                             path);
  params.W_KQ = Mat(D, D);
  params.W_V = Mat(params.N, D);
  const auto read_matrix = [&in, &path](Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (!(in >> m(i, j)))
          throw std::runtime_error("load_checkpoint: truncated matrix in " +
                                   path);
  };
  read_matrix(params.W_KQ);
  read_matrix(params.W_V);
  params.validate();
  return params;
}

}  // namespace triggerlab
