#pragma once

#include <string>
#include <vector>

#include "vista/scene.hpp"
#include "vista/tensor.hpp"

namespace vista {

enum class QaKind { YesNo, MultipleChoice };

// What the oracle should measure to answer a question.
enum class QaProbe {
    PresenceColorShape, // is there a {color} {shape}
    ProtagonistSize,    // is the {shape} large
    BackgroundIs,       // is the background {color}
    ColorOfShape,       // MC: what color is the {shape}
    ShapeOfColor,       // MC: what shape is the {color} object
    BackgroundColor,    // MC: what color is the background
    CellOfShape,        // MC: which cell holds the {shape}
};

struct QAItem {
    std::string question;
    QaKind kind = QaKind::YesNo;
    QaProbe probe = QaProbe::PresenceColorShape;
    std::vector<std::string> choices; // yes-no uses {"yes","no"}
    int answer = 0;                   // index into choices
    std::string source_fact;

    // machine-readable payload
    int probe_color = -1;           // object or background palette index
    int probe_shape = -1;           // shape index
    std::vector<int> option_values; // MC: palette indices / cell ids, canonical order
};

// Deterministic template questions derived from the graph alone; at least
// four per frame, covering protagonist color/shape/size, background and
// position, plus companion presence when one is present.
std::vector<QAItem> generate_questions(const SceneGraph& g);

// Deterministic pixel-statistics answerer. Always returns a choice index;
// uncertainty is not modeled.
int answer_question_oracle(const Tensor<float>& image, const QAItem& item);

// Mean over frames of per-frame question accuracy.
double tifa_analog_score(const std::vector<Tensor<float>>& images,
                         const std::vector<SceneGraph>& graphs);

// Oracle internals, exposed for tests.
struct LocatedObject {
    GridPos cell;
    int size = 0;
    double iou = 0.0;
};
LocatedObject oracle_locate_shape(const Tensor<float>& image, Shape s);
int oracle_background(const Tensor<float>& image); // bg palette index
std::string cell_name(GridPos p);

} // namespace vista
