#include "vista/qa.hpp"

#include <algorithm>
#include <cmath>

#include "vista/errors.hpp"

namespace vista {

namespace {

constexpr double kColorTol2 = 0.0625; // squared RGB distance for "is this color"
constexpr double kPresenceFrac = 0.6;

struct Rgb {
    double r = 0, g = 0, b = 0;
};

Rgb pixel(const Tensor<float>& img, int x, int y) {
    const float* p = &img.data[((size_t)y * kImageSize + x) * 3];
    return {p[0], p[1], p[2]};
}

double dist2(const Rgb& a, const RgbF& c) {
    const double dr = a.r - c.r, dg = a.g - c.g, db = a.b - c.b;
    return dr * dr + dg * dg + db * db;
}

// Majority vote over the 2-px border ring, quantized to the background
// palette. Shapes can clip the ring corners but never dominate it.
int measure_background(const Tensor<float>& img) {
    int votes[kNumBackgroundColors] = {0};
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x) {
            if (x >= 2 && x < kImageSize - 2 && y >= 2 && y < kImageSize - 2) continue;
            const Rgb p = pixel(img, x, y);
            votes[nearest_background_color((float)p.r, (float)p.g, (float)p.b)]++;
        }
    int best = 0;
    for (int i = 1; i < kNumBackgroundColors; ++i)
        if (votes[i] > votes[best]) best = i;
    return best;
}

// Object = pixel far from the measured background color.
bool is_object_pixel(const Tensor<float>& img, int x, int y, const RgbF& bg) {
    return dist2(pixel(img, x, y), bg) > 0.09;
}

// IoU between a shape prototype at (cell, size) and the object pixels in
// the prototype's bounding box around that cell.
double mask_iou(const Tensor<float>& img, Shape s, int size, GridPos cell, const RgbF& bg) {
    const int r = shape_radius(size);
    const int cx = cell_center(cell.col);
    const int cy = cell_center(cell.row);
    const int box = kLargeRadius; // fixed local window, keeps neighbors out
    int inter = 0, uni = 0;
    for (int dy = -box; dy <= box; ++dy)
        for (int dx = -box; dx <= box; ++dx) {
            const int x = cx + dx, y = cy + dy;
            const bool proto = std::abs(dx) <= r && std::abs(dy) <= r && shape_mask(s, r, dx, dy);
            bool obj = false;
            if (x >= 0 && x < kImageSize && y >= 0 && y < kImageSize)
                obj = is_object_pixel(img, x, y, bg);
            if (proto && obj) ++inter;
            if (proto || obj) ++uni;
        }
    return uni == 0 ? 0.0 : (double)inter / (double)uni;
}

// Fraction of prototype pixels lying close to a named object color.
double color_match_frac(const Tensor<float>& img, Shape s, int size, GridPos cell, int color) {
    const int r = shape_radius(size);
    const int cx = cell_center(cell.col);
    const int cy = cell_center(cell.row);
    const RgbF want = object_palette()[(size_t)color];
    int total = 0, hit = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            if (!shape_mask(s, r, dx, dy)) continue;
            ++total;
            const int x = cx + dx, y = cy + dy;
            if (x < 0 || x >= kImageSize || y < 0 || y >= kImageSize) continue;
            if (dist2(pixel(img, x, y), want) <= kColorTol2) ++hit;
        }
    return total == 0 ? 0.0 : (double)hit / (double)total;
}

// IoU between the prototype and the color-matched pixels in its window.
// Coverage alone is not enough: a small prototype buried inside a larger
// object of the same color would count as present.
double color_match_iou(const Tensor<float>& img, Shape s, int size, GridPos cell, int color) {
    const int r = shape_radius(size);
    const int cx = cell_center(cell.col);
    const int cy = cell_center(cell.row);
    const RgbF want = object_palette()[(size_t)color];
    const int box = kLargeRadius;
    int inter = 0, uni = 0;
    for (int dy = -box; dy <= box; ++dy)
        for (int dx = -box; dx <= box; ++dx) {
            const int x = cx + dx, y = cy + dy;
            const bool proto = std::abs(dx) <= r && std::abs(dy) <= r && shape_mask(s, r, dx, dy);
            bool colored = false;
            if (x >= 0 && x < kImageSize && y >= 0 && y < kImageSize)
                colored = dist2(pixel(img, x, y), want) <= kColorTol2;
            if (proto && colored) ++inter;
            if (proto || colored) ++uni;
        }
    return uni == 0 ? 0.0 : (double)inter / (double)uni;
}

Rgb mean_color(const Tensor<float>& img, Shape s, int size, GridPos cell) {
    const int r = shape_radius(size);
    const int cx = cell_center(cell.col);
    const int cy = cell_center(cell.row);
    Rgb acc;
    int n = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            if (!shape_mask(s, r, dx, dy)) continue;
            const int x = cx + dx, y = cy + dy;
            if (x < 0 || x >= kImageSize || y < 0 || y >= kImageSize) continue;
            const Rgb p = pixel(img, x, y);
            acc.r += p.r;
            acc.g += p.g;
            acc.b += p.b;
            ++n;
        }
    if (n > 0) {
        acc.r /= n;
        acc.g /= n;
        acc.b /= n;
    }
    return acc;
}

// Center of mass of object pixels in the prototype window at a cell.
GridPos nearest_cell_of_mass(const Tensor<float>& img, const RgbF& bg) {
    double sx = 0, sy = 0;
    int n = 0;
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            if (is_object_pixel(img, x, y, bg)) {
                sx += x;
                sy += y;
                ++n;
            }
    if (n == 0) return {0, 0};
    const double mx = sx / n, my = sy / n;
    GridPos best{0, 0};
    double best_d = 1e30;
    for (int rr = 0; rr < kGridCells; ++rr)
        for (int cc = 0; cc < kGridCells; ++cc) {
            const double dx = mx - cell_center(cc);
            const double dy = my - cell_center(rr);
            const double d = dx * dx + dy * dy;
            if (d < best_d) {
                best_d = d;
                best = {rr, cc};
            }
        }
    return best;
}


// MC options: window of 4 values starting at the answer, sorted ascending.
std::vector<int> option_window(int correct, int domain) {
    std::vector<int> vals;
    for (int i = 0; i < 4; ++i) vals.push_back((correct + i) % domain);
    std::sort(vals.begin(), vals.end());
    return vals;
}

int option_index(const std::vector<int>& vals, int v) {
    for (size_t i = 0; i < vals.size(); ++i)
        if (vals[i] == v) return (int)i;
    throw DataError("option list missing the answer");
}

} // namespace

std::string cell_name(GridPos p) {
    static const char* rows[3] = {"top", "middle", "bottom"};
    static const char* cols[3] = {"left", "center", "right"};
    return std::string(rows[p.row]) + "-" + cols[p.col];
}

std::vector<QAItem> generate_questions(const SceneGraph& g) {
    std::vector<QAItem> items;
    const auto& oc = object_color_names();
    const auto& sn = shape_names();
    const auto& bn = background_color_names();

    auto yes_no = [&](QaProbe probe, const std::string& q, bool truth, const std::string& fact,
                      int pc, int ps) {
        QAItem it;
        it.kind = QaKind::YesNo;
        it.probe = probe;
        it.question = q;
        it.choices = {"yes", "no"};
        it.answer = truth ? 0 : 1;
        it.source_fact = fact;
        it.probe_color = pc;
        it.probe_shape = ps;
        items.push_back(std::move(it));
    };

    // presence, true
    yes_no(QaProbe::PresenceColorShape,
           "is there a " + oc[(size_t)g.protagonist.color] + " " +
               sn[(size_t)(int)g.protagonist.shape] + "?",
           true, "protagonist-presence", g.protagonist.color, (int)g.protagonist.shape);

    // presence, false: first (color,shape) derangement not present in the frame
    {
        int pc = -1, ps = -1;
        for (int off = 1; off < kNumObjectColors && pc < 0; ++off) {
            const int c = (g.protagonist.color + off) % kNumObjectColors;
            const int s = ((int)g.protagonist.shape + off) % kNumShapes;
            const bool hits_comp = g.has_companion && g.companion.color == c &&
                                   (int)g.companion.shape == s;
            if (!hits_comp) {
                pc = c;
                ps = s;
            }
        }
        yes_no(QaProbe::PresenceColorShape,
               "is there a " + oc[(size_t)pc] + " " + sn[(size_t)ps] + "?", false,
               "absent-object", pc, ps);
    }

    // protagonist size
    yes_no(QaProbe::ProtagonistSize, "is the " + sn[(size_t)(int)g.protagonist.shape] + " large?",
           g.protagonist.size == 1, "protagonist-size", -1, (int)g.protagonist.shape);

    // background yes/no, true and false
    yes_no(QaProbe::BackgroundIs, "is the background " + bn[(size_t)g.background] + "?", true,
           "background-color", g.background, -1);
    yes_no(QaProbe::BackgroundIs,
           "is the background " + bn[(size_t)((g.background + 1) % kNumBackgroundColors)] + "?",
           false, "background-color", (g.background + 1) % kNumBackgroundColors, -1);

    // MC: protagonist color
    {
        QAItem it;
        it.kind = QaKind::MultipleChoice;
        it.probe = QaProbe::ColorOfShape;
        it.option_values = option_window(g.protagonist.color, kNumObjectColors);
        it.probe_shape = (int)g.protagonist.shape;
        it.answer = option_index(it.option_values, g.protagonist.color);
        it.source_fact = "protagonist-color";
        std::string q = "what color is the " + sn[(size_t)(int)g.protagonist.shape] + "?";
        for (size_t i = 0; i < it.option_values.size(); ++i) {
            q += std::string(" ") + (char)('A' + (int)i) + ". " + oc[(size_t)it.option_values[i]];
            it.choices.push_back(oc[(size_t)it.option_values[i]]);
        }
        it.question = q;
        items.push_back(std::move(it));
    }

    // MC: protagonist shape (all four shapes)
    {
        QAItem it;
        it.kind = QaKind::MultipleChoice;
        it.probe = QaProbe::ShapeOfColor;
        it.option_values = {0, 1, 2, 3};
        it.probe_color = g.protagonist.color;
        it.answer = (int)g.protagonist.shape;
        it.source_fact = "protagonist-shape";
        std::string q = "what shape is the " + oc[(size_t)g.protagonist.color] + " object?";
        for (size_t i = 0; i < it.option_values.size(); ++i) {
            q += std::string(" ") + (char)('A' + (int)i) + ". " + sn[(size_t)it.option_values[i]];
            it.choices.push_back(sn[(size_t)it.option_values[i]]);
        }
        it.question = q;
        items.push_back(std::move(it));
    }

    // MC: background color
    {
        QAItem it;
        it.kind = QaKind::MultipleChoice;
        it.probe = QaProbe::BackgroundColor;
        it.option_values = option_window(g.background, kNumBackgroundColors);
        it.answer = option_index(it.option_values, g.background);
        it.source_fact = "background-color";
        std::string q = "what color is the background?";
        for (size_t i = 0; i < it.option_values.size(); ++i) {
            q += std::string(" ") + (char)('A' + (int)i) + ". " + bn[(size_t)it.option_values[i]];
            it.choices.push_back(bn[(size_t)it.option_values[i]]);
        }
        it.question = q;
        items.push_back(std::move(it));
    }

    // MC: protagonist cell
    {
        QAItem it;
        it.kind = QaKind::MultipleChoice;
        it.probe = QaProbe::CellOfShape;
        const int cell_id = g.pos.row * kGridCells + g.pos.col;
        it.option_values = option_window(cell_id, kGridCells * kGridCells);
        it.probe_shape = (int)g.protagonist.shape;
        it.answer = option_index(it.option_values, cell_id);
        it.source_fact = "protagonist-position";
        std::string q = "where is the " + sn[(size_t)(int)g.protagonist.shape] + "?";
        for (size_t i = 0; i < it.option_values.size(); ++i) {
            const GridPos p{it.option_values[i] / kGridCells, it.option_values[i] % kGridCells};
            q += std::string(" ") + (char)('A' + (int)i) + ". " + cell_name(p);
            it.choices.push_back(cell_name(p));
        }
        it.question = q;
        items.push_back(std::move(it));
    }

    // companion presence, when present
    if (g.has_companion) {
        yes_no(QaProbe::PresenceColorShape,
               "is there a " + oc[(size_t)g.companion.color] + " " +
                   sn[(size_t)(int)g.companion.shape] + "?",
               true, "companion-presence", g.companion.color, (int)g.companion.shape);
    }

    return items;
}

LocatedObject oracle_locate_shape(const Tensor<float>& image, Shape s) {
    const RgbF bg = background_palette()[(size_t)measure_background(image)];
    LocatedObject best;
    best.iou = -1.0;
    for (int rr = 0; rr < kGridCells; ++rr)
        for (int cc = 0; cc < kGridCells; ++cc)
            for (int size = 0; size < 2; ++size) {
                const double iou = mask_iou(image, s, size, {rr, cc}, bg);
                if (iou > best.iou) {
                    best.iou = iou;
                    best.cell = {rr, cc};
                    best.size = size;
                }
            }
    return best;
}

int oracle_background(const Tensor<float>& image) { return measure_background(image); }

int answer_question_oracle(const Tensor<float>& image, const QAItem& item) {
    if (image.ndim() != 3 || image.shape[0] != kImageSize || image.shape[1] != kImageSize ||
        image.shape[2] != 3)
        throw DimensionError("oracle: expected 32x32x3 image");

    switch (item.probe) {
        case QaProbe::PresenceColorShape: {
            // present iff some cell holds color-matched pixels whose best
            // shape interpretation is the probed shape
            for (int rr = 0; rr < kGridCells; ++rr)
                for (int cc = 0; cc < kGridCells; ++cc) {
                    double best_iou = 0.0;
                    int best_shape = -1;
                    for (int sh = 0; sh < kNumShapes; ++sh)
                        for (int size = 0; size < 2; ++size) {
                            const double iou = color_match_iou(image, (Shape)sh, size, {rr, cc},
                                                               item.probe_color);
                            if (iou > best_iou + 1e-12) {
                                best_iou = iou;
                                best_shape = sh;
                            }
                        }
                    if (best_shape == item.probe_shape && best_iou >= kPresenceFrac)
                        return 0; // yes
                }
            return 1; // no
        }
        case QaProbe::ProtagonistSize: {
            const LocatedObject loc = oracle_locate_shape(image, (Shape)item.probe_shape);
            return loc.size == 1 ? 0 : 1;
        }
        case QaProbe::BackgroundIs:
            return measure_background(image) == item.probe_color ? 0 : 1;
        case QaProbe::ColorOfShape: {
            const LocatedObject loc = oracle_locate_shape(image, (Shape)item.probe_shape);
            const Rgb m = mean_color(image, (Shape)item.probe_shape, loc.size, loc.cell);
            int best = 0;
            double best_d = 1e30;
            for (size_t i = 0; i < item.option_values.size(); ++i) {
                const double d = dist2(m, object_palette()[(size_t)item.option_values[i]]);
                if (d < best_d) {
                    best_d = d;
                    best = (int)i;
                }
            }
            return best;
        }
        case QaProbe::ShapeOfColor: {
            // match each candidate shape prototype against pixels of the
            // asked color; a fully covered prototype scores by its pixel
            // count so the largest consistent shape wins; ties break to the
            // first option
            int best = 0;
            double best_score = -1.0;
            for (size_t i = 0; i < item.option_values.size(); ++i) {
                const Shape s = (Shape)item.option_values[i];
                double sc = 0.0;
                for (int rr = 0; rr < kGridCells; ++rr)
                    for (int cc = 0; cc < kGridCells; ++cc)
                        for (int size = 0; size < 2; ++size) {
                            const double frac =
                                color_match_frac(image, s, size, {rr, cc}, item.probe_color);
                            const int r = shape_radius(size);
                            int count = 0;
                            for (int dy = -r; dy <= r; ++dy)
                                for (int dx = -r; dx <= r; ++dx)
                                    if (shape_mask(s, r, dx, dy)) ++count;
                            const double score = frac >= 0.95 ? frac * count : frac;
                            sc = std::max(sc, score);
                        }
                if (sc > best_score + 1e-12) {
                    best_score = sc;
                    best = (int)i;
                }
            }
            return best;
        }
        case QaProbe::BackgroundColor: {
            const int bg = measure_background(image);
            // among options, prefer exact palette match, else nearest RGB
            for (size_t i = 0; i < item.option_values.size(); ++i)
                if (item.option_values[i] == bg) return (int)i;
            const RgbF m = background_palette()[(size_t)bg];
            int best = 0;
            double best_d = 1e30;
            for (size_t i = 0; i < item.option_values.size(); ++i) {
                const RgbF c = background_palette()[(size_t)item.option_values[i]];
                const double dr = m.r - c.r, dg = m.g - c.g, db = m.b - c.b;
                const double d = dr * dr + dg * dg + db * db;
                if (d < best_d) {
                    best_d = d;
                    best = (int)i;
                }
            }
            return best;
        }
        case QaProbe::CellOfShape: {
            const RgbF bg = background_palette()[(size_t)measure_background(image)];
            const LocatedObject loc = oracle_locate_shape(image, (Shape)item.probe_shape);
            GridPos cell = loc.cell;
            if (loc.iou <= 0.0) cell = nearest_cell_of_mass(image, bg);
            const int cell_id = cell.row * kGridCells + cell.col;
            for (size_t i = 0; i < item.option_values.size(); ++i)
                if (item.option_values[i] == cell_id) return (int)i;
            // answer the option whose cell is nearest to the located one
            int best = 0;
            double best_d = 1e30;
            for (size_t i = 0; i < item.option_values.size(); ++i) {
                const GridPos p{item.option_values[i] / kGridCells,
                                item.option_values[i] % kGridCells};
                const double dr = cell_center(p.row) - cell_center(cell.row);
                const double dc = cell_center(p.col) - cell_center(cell.col);
                const double d = dr * dr + dc * dc;
                if (d < best_d) {
                    best_d = d;
                    best = (int)i;
                }
            }
            return best;
        }
    }
    throw DataError("oracle: unknown probe");
}

double tifa_analog_score(const std::vector<Tensor<float>>& images,
                         const std::vector<SceneGraph>& graphs) {
    if (images.empty() || images.size() != graphs.size())
        throw DataError("tifa: images/graphs size mismatch or empty");
    double total = 0.0;
    for (size_t i = 0; i < images.size(); ++i) {
        const auto items = generate_questions(graphs[i]);
        int correct = 0;
        for (const auto& q : items)
            if (answer_question_oracle(images[i], q) == q.answer) ++correct;
        total += (double)correct / (double)items.size();
    }
    return total / (double)images.size();
}

} // namespace vista
