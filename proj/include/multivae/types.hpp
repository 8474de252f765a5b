#pragma once

#include <array>
#include <string>
#include <vector>

#include "multivae/errors.hpp"
#include "multivae/tensor.hpp"

namespace multivae {

// Tabletop workspace (meters). Objects live on the table plane inside
// [-kWorkspaceHalf, kWorkspaceHalf]^2; trajectories may exceed the workspace
// by at most kWorkspaceSlack.
constexpr double kWorkspaceHalf = 0.25;
constexpr double kWorkspaceZMax = 0.25;
constexpr double kWorkspaceSlack = 0.5;

constexpr Index kImageSize = 64;
constexpr Index kDefaultTMax = 80;
constexpr Index kDefaultLMax = 8;

/// H x W x 3 image with values in [0,1].
struct ImageTensor {
  Tensor pixels;  // [H, W, 3]

  void validate() const {
    if (pixels.rank() != 3 || pixels.dim(2) != 3)
      throw ShapeError("image: expected [H,W,3], have " + pixels.shape_str());
    for (Index i = 0; i < pixels.numel(); ++i) {
      const double v = pixels[i];
      if (!(v >= 0.0 && v <= 1.0)) throw ShapeError("image: pixel outside [0,1]");
    }
  }
};

/// End-effector trajectory: rows of (x, y, z, gripper) plus a validity mask.
struct Trajectory {
  Tensor steps;            // [T, 4]
  std::vector<bool> mask;  // length T

  Index length() const { return steps.rank() == 2 ? steps.dim(0) : 0; }

  Index valid_count() const {
    Index n = 0;
    for (bool b : mask) n += b ? 1 : 0;
    return n;
  }

  void validate(Index t_max = kDefaultTMax) const {
    if (steps.rank() != 2 || steps.dim(1) != 4)
      throw ShapeError("trajectory: expected [T,4], have " + steps.shape_str());
    const Index t = steps.dim(0);
    if (t < 1 || t > t_max) throw ShapeError("trajectory: length outside [1, T_max]");
    if (static_cast<Index>(mask.size()) != t) throw ShapeError("trajectory: mask length mismatch");
    const double lo = -kWorkspaceHalf - kWorkspaceSlack;
    const double hi = kWorkspaceHalf + kWorkspaceSlack;
    for (Index r = 0; r < t; ++r) {
      if (!mask[static_cast<std::size_t>(r)]) continue;
      for (Index c = 0; c < 3; ++c) {
        const double v = steps[r * 4 + c];
        if (!std::isfinite(v)) throw InvalidTrajectoryError("trajectory: non-finite coordinate");
        if (v < lo || v > hi) throw ShapeError("trajectory: coordinate outside workspace slack");
      }
      const double gv = steps[r * 4 + 3];
      if (!(gv >= 0.0 && gv <= 1.0)) throw ShapeError("trajectory: gripper outside [0,1]");
    }
  }
};

/// Fixed ordered word list shared by instructions and the text codec.
struct Vocabulary {
  std::vector<std::string> words;

  Index size() const { return static_cast<Index>(words.size()); }

  Index id(const std::string& w) const {
    for (std::size_t i = 0; i < words.size(); ++i)
      if (words[i] == w) return static_cast<Index>(i);
    throw VocabularyError("vocabulary: unknown word '" + w + "'");
  }

  Index pad_id() const { return id("PAD"); }
};

inline Vocabulary default_vocabulary() {
  return Vocabulary{{"reach", "lift", "move", "left", "right", "the", "apple", "lemon", "soap",
                     "put", "close", "drawer", "PAD"}};
}

struct TokenSequence {
  std::vector<Index> tokens;

  void validate(const Vocabulary& vocab, Index l_max = kDefaultLMax) const {
    if (static_cast<Index>(tokens.size()) > l_max)
      throw ShapeError("token sequence: longer than L_max");
    for (Index t : tokens)
      if (t < 0 || t >= vocab.size())
        throw VocabularyError("token sequence: index out of vocabulary");
  }

  std::string to_string(const Vocabulary& vocab) const {
    std::string out;
    for (Index t : tokens) {
      if (!out.empty()) out += ' ';
      out += vocab.words[static_cast<std::size_t>(t)];
    }
    return out;
  }
};

}  // namespace multivae
