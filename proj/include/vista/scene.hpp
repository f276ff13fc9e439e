#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vista/rng.hpp"
#include "vista/tensor.hpp"

namespace vista {

// Synthetic "shape story" world: one protagonist with fixed identity per
// story, moving on a 3x3 grid over changing backgrounds, optionally joined
// by a companion object.

constexpr int kImageSize = 32;
constexpr int kGridCells = 3;
constexpr int kNumShapes = 4;
constexpr int kNumObjectColors = 8;
constexpr int kNumBackgroundColors = 6;
constexpr int kNumVerbs = 4;
constexpr int kSmallRadius = 3;
constexpr int kLargeRadius = 5;

enum class Shape : int { Circle = 0, Square = 1, Triangle = 2, Star = 3 };
enum class Verb : int { Sits = 0, MovesLeft = 1, MovesRight = 2, Jumps = 3 };

struct RgbF {
    float r, g, b;
};

const std::array<std::string, kNumShapes>& shape_names();
const std::array<std::string, kNumObjectColors>& object_color_names();
const std::array<std::string, kNumBackgroundColors>& background_color_names();
const std::array<std::string, kNumVerbs>& verb_names();
const std::array<RgbF, kNumObjectColors>& object_palette();
const std::array<RgbF, kNumBackgroundColors>& background_palette();

struct ObjectSpec {
    Shape shape = Shape::Circle;
    int color = 0; // object palette index
    int size = 0;  // 0 = small, 1 = large

    bool operator==(const ObjectSpec&) const = default;
};

struct GridPos {
    int row = 0;
    int col = 0;

    bool operator==(const GridPos&) const = default;
};

// Ground truth for one frame. The protagonist identity is constant across a
// story; background, verb, position and companion presence vary per frame.
// The caption template expresses everything except the grid position and
// the companion's size; those two are image-only attributes.
struct SceneGraph {
    ObjectSpec protagonist;
    int background = 0; // background palette index
    GridPos pos;        // protagonist cell
    Verb verb = Verb::Sits;
    bool has_companion = false;
    ObjectSpec companion;

    bool operator==(const SceneGraph&) const = default;
};

// Fields the caption template can express (position and companion size are
// latent; a parsed graph carries sentinels for them).
bool expressed_equal(const SceneGraph& a, const SceneGraph& b);

int shape_radius(int size); // small -> 3, large -> 5

// Inclusive integer mask test for a shape of radius r centered at origin.
bool shape_mask(Shape s, int r, int dx, int dy);

// Exact pixel count of the integer mask, closed form.
// circle is pi*r^2 (continuous; the integer count tracks it within a few %).
double shape_area(Shape s, int r);

// Verb dynamics: where the protagonist ends up after acting from `from`.
GridPos apply_verb(GridPos from, Verb v);
bool verb_feasible(GridPos from, Verb v);

// Companion cell rule: mirrored cell, with the center special-cased.
GridPos companion_cell(GridPos protagonist);

int cell_center(int idx); // cell index 0..2 -> pixel center

// Deterministic rasterization to [H,W,3] floats in [0,1].
Tensor<float> render_scene(const SceneGraph& g);

std::string caption_from_graph(const SceneGraph& g);

// Inverse of caption_from_graph on expressed fields. Latent fields come back
// as sentinels (pos = {-1,-1}, companion size = -1). Throws DataError on
// strings outside the grammar.
SceneGraph parse_caption(const std::string& caption);

// Canonical single-line serialization of the full graph (used in corpus
// files); parse_graph_text inverts it exactly.
std::string graph_to_text(const SceneGraph& g);
SceneGraph parse_graph_text(const std::string& line);

// Colors
int nearest_object_color(float r, float g, float b);
int nearest_background_color(float r, float g, float b);

} // namespace vista
