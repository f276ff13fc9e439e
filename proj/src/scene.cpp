#include "vista/scene.hpp"

#include <cmath>
#include <sstream>

#include "vista/errors.hpp"

namespace vista {

const std::array<std::string, kNumShapes>& shape_names() {
    static const std::array<std::string, kNumShapes> n = {"circle", "square", "triangle", "star"};
    return n;
}

const std::array<std::string, kNumObjectColors>& object_color_names() {
    static const std::array<std::string, kNumObjectColors> n = {
        "red", "green", "blue", "yellow", "magenta", "cyan", "orange", "purple"};
    return n;
}

const std::array<std::string, kNumBackgroundColors>& background_color_names() {
    static const std::array<std::string, kNumBackgroundColors> n = {"white", "black",
                                                                    "gray",  "brown",
                                                                    "pink",  "navy"};
    return n;
}

const std::array<std::string, kNumVerbs>& verb_names() {
    static const std::array<std::string, kNumVerbs> n = {"sits", "moves-left", "moves-right",
                                                         "jumps"};
    return n;
}

const std::array<RgbF, kNumObjectColors>& object_palette() {
    static const std::array<RgbF, kNumObjectColors> p = {{
        {1.00f, 0.00f, 0.00f}, // red
        {0.00f, 0.75f, 0.00f}, // green
        {0.00f, 0.00f, 1.00f}, // blue
        {1.00f, 1.00f, 0.00f}, // yellow
        {1.00f, 0.00f, 1.00f}, // magenta
        {0.00f, 1.00f, 1.00f}, // cyan
        {1.00f, 0.55f, 0.10f}, // orange
        {0.60f, 0.10f, 0.90f}, // purple
    }};
    return p;
}

const std::array<RgbF, kNumBackgroundColors>& background_palette() {
    static const std::array<RgbF, kNumBackgroundColors> p = {{
        {1.00f, 1.00f, 1.00f}, // white
        {0.00f, 0.00f, 0.00f}, // black
        {0.50f, 0.50f, 0.50f}, // gray
        {0.45f, 0.30f, 0.15f}, // brown
        {1.00f, 0.80f, 0.85f}, // pink
        {0.05f, 0.10f, 0.40f}, // navy
    }};
    return p;
}

bool expressed_equal(const SceneGraph& a, const SceneGraph& b) {
    if (!(a.protagonist == b.protagonist)) return false;
    if (a.background != b.background || a.verb != b.verb) return false;
    if (a.has_companion != b.has_companion) return false;
    if (a.has_companion) {
        if (a.companion.shape != b.companion.shape) return false;
        if (a.companion.color != b.companion.color) return false;
        // companion size is not expressed by the caption
    }
    return true;
}

int shape_radius(int size) { return size == 0 ? kSmallRadius : kLargeRadius; }

bool shape_mask(Shape s, int r, int dx, int dy) {
    const int ax = dx < 0 ? -dx : dx;
    const int ay = dy < 0 ? -dy : dy;
    switch (s) {
        case Shape::Circle:
            return dx * dx + dy * dy <= r * r;
        case Shape::Square:
            return ax <= r && ay <= r;
        case Shape::Triangle: {
            // apex up: row offset i in [0, 2r], half width floor(i/2)
            const int i = dy + r;
            if (i < 0 || i > 2 * r) return false;
            return ax <= i / 2;
        }
        case Shape::Star: {
            // diamond with four detached corner points; distinct from the
            // circle and square masks at both radii
            return (ax + ay <= r) || (ax == r && ay == r);
        }
    }
    return false;
}

double shape_area(Shape s, int r) {
    switch (s) {
        case Shape::Circle:
            return 3.14159265358979323846 * r * r;
        case Shape::Square:
            return (double)(2 * r + 1) * (2 * r + 1);
        case Shape::Triangle:
            return (double)(r + 1) * (r + 1) + (double)r * r;
        case Shape::Star:
            // diamond count plus the four corner points
            return (double)(2 * r * r + 2 * r + 1) + 4.0;
    }
    return 0.0;
}

GridPos apply_verb(GridPos from, Verb v) {
    switch (v) {
        case Verb::Sits: return from;
        case Verb::MovesLeft: return {from.row, from.col - 1};
        case Verb::MovesRight: return {from.row, from.col + 1};
        case Verb::Jumps: return {from.row == 0 ? 1 : from.row - 1, from.col};
    }
    return from;
}

bool verb_feasible(GridPos from, Verb v) {
    const GridPos to = apply_verb(from, v);
    return to.row >= 0 && to.row < kGridCells && to.col >= 0 && to.col < kGridCells;
}

GridPos companion_cell(GridPos p) {
    GridPos m{kGridCells - 1 - p.row, kGridCells - 1 - p.col};
    if (m == p) return {0, 0}; // center mirrors onto itself
    return m;
}

int cell_center(int idx) {
    static const int centers[kGridCells] = {5, 16, 26};
    return centers[idx];
}

static void draw_object(Tensor<float>& img, const ObjectSpec& o, GridPos cell) {
    const RgbF c = object_palette()[(size_t)o.color];
    const int r = shape_radius(o.size);
    const int cx = cell_center(cell.col);
    const int cy = cell_center(cell.row);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            if (!shape_mask(o.shape, r, dx, dy)) continue;
            const int x = cx + dx;
            const int y = cy + dy;
            if (x < 0 || x >= kImageSize || y < 0 || y >= kImageSize) continue;
            float* px = &img.data[((size_t)y * kImageSize + x) * 3];
            px[0] = c.r;
            px[1] = c.g;
            px[2] = c.b;
        }
}

Tensor<float> render_scene(const SceneGraph& g) {
    Tensor<float> img = Tensor<float>::zeros({kImageSize, kImageSize, 3});
    const RgbF bg = background_palette()[(size_t)g.background];
    for (int i = 0; i < kImageSize * kImageSize; ++i) {
        img.data[(size_t)i * 3 + 0] = bg.r;
        img.data[(size_t)i * 3 + 1] = bg.g;
        img.data[(size_t)i * 3 + 2] = bg.b;
    }
    if (g.has_companion) draw_object(img, g.companion, companion_cell(g.pos));
    draw_object(img, g.protagonist, g.pos);
    return img;
}

std::string caption_from_graph(const SceneGraph& g) {
    std::ostringstream os;
    os << "the " << (g.protagonist.size == 0 ? "small" : "large") << " "
       << object_color_names()[(size_t)g.protagonist.color] << " "
       << shape_names()[(size_t)(int)g.protagonist.shape] << " "
       << verb_names()[(size_t)(int)g.verb] << " on the "
       << background_color_names()[(size_t)g.background] << " background";
    if (g.has_companion) {
        os << ", with a " << object_color_names()[(size_t)g.companion.color] << " "
           << shape_names()[(size_t)(int)g.companion.shape];
    }
    return os.str();
}

namespace {

int find_name(const std::string& w, const std::string* names, int n) {
    for (int i = 0; i < n; ++i)
        if (names[i] == w) return i;
    return -1;
}

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ' ') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur = ",";
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

} // namespace

SceneGraph parse_caption(const std::string& caption) {
    const auto w = split_words(caption);
    auto fail = [&](const std::string& why) -> SceneGraph {
        throw DataError("caption outside grammar (" + why + "): " + caption);
    };
    // the {size} {color} {shape} {verb} on the {bg} background [, with a {c} {s}]
    if (w.size() < 9) return fail("too short");
    if (w[0] != "the") return fail("missing leading article");
    SceneGraph g;
    if (w[1] == "small") g.protagonist.size = 0;
    else if (w[1] == "large") g.protagonist.size = 1;
    else return fail("size");
    int ci = find_name(w[2], object_color_names().data(), kNumObjectColors);
    if (ci < 0) return fail("color");
    g.protagonist.color = ci;
    int si = find_name(w[3], shape_names().data(), kNumShapes);
    if (si < 0) return fail("shape");
    g.protagonist.shape = (Shape)si;
    int vi = find_name(w[4], verb_names().data(), kNumVerbs);
    if (vi < 0) return fail("verb");
    g.verb = (Verb)vi;
    if (w[5] != "on" || w[6] != "the") return fail("preposition");
    int bi = find_name(w[7], background_color_names().data(), kNumBackgroundColors);
    if (bi < 0) return fail("background color");
    g.background = bi;
    if (w[8] != "background") return fail("background word");
    g.pos = {-1, -1}; // not expressed by the caption
    if (w.size() == 9) {
        g.has_companion = false;
        return g;
    }
    if (w.size() != 14 || w[9] != "," || w[10] != "with" || w[11] != "a")
        return fail("companion clause");
    int cci = find_name(w[12], object_color_names().data(), kNumObjectColors);
    if (cci < 0) return fail("companion color");
    int csi = find_name(w[13], shape_names().data(), kNumShapes);
    if (csi < 0) return fail("companion shape");
    g.has_companion = true;
    g.companion.color = cci;
    g.companion.shape = (Shape)csi;
    g.companion.size = -1; // not expressed
    return g;
}

std::string graph_to_text(const SceneGraph& g) {
    std::ostringstream os;
    os << "proto=" << shape_names()[(size_t)(int)g.protagonist.shape] << ","
       << object_color_names()[(size_t)g.protagonist.color] << ","
       << (g.protagonist.size == 0 ? "small" : "large");
    os << " pos=" << g.pos.row << "," << g.pos.col;
    os << " verb=" << verb_names()[(size_t)(int)g.verb];
    os << " bg=" << background_color_names()[(size_t)g.background];
    if (g.has_companion) {
        os << " comp=" << shape_names()[(size_t)(int)g.companion.shape] << ","
           << object_color_names()[(size_t)g.companion.color] << ","
           << (g.companion.size == 0 ? "small" : "large");
    } else {
        os << " comp=none";
    }
    return os.str();
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

ObjectSpec parse_object(const std::string& s, const std::string& ctx) {
    const auto parts = split_on(s, ',');
    if (parts.size() != 3) throw DataError("bad object spec in " + ctx + ": " + s);
    ObjectSpec o;
    int si = find_name(parts[0], shape_names().data(), kNumShapes);
    int ci = find_name(parts[1], object_color_names().data(), kNumObjectColors);
    if (si < 0 || ci < 0) throw DataError("bad object spec in " + ctx + ": " + s);
    o.shape = (Shape)si;
    o.color = ci;
    if (parts[2] == "small") o.size = 0;
    else if (parts[2] == "large") o.size = 1;
    else throw DataError("bad object size in " + ctx + ": " + s);
    return o;
}

} // namespace

SceneGraph parse_graph_text(const std::string& line) {
    SceneGraph g;
    bool saw_proto = false, saw_pos = false, saw_verb = false, saw_bg = false, saw_comp = false;
    std::vector<std::string> fields;
    {
        std::istringstream is(line);
        std::string w;
        while (is >> w) fields.push_back(w);
    }
    for (const auto& field : fields) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw DataError("bad graph field: " + field);
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        if (key == "proto") {
            g.protagonist = parse_object(val, "proto");
            saw_proto = true;
        } else if (key == "pos") {
            const auto rc = split_on(val, ',');
            if (rc.size() != 2) throw DataError("bad pos: " + val);
            g.pos = {std::stoi(rc[0]), std::stoi(rc[1])};
            saw_pos = true;
        } else if (key == "verb") {
            int vi = find_name(val, verb_names().data(), kNumVerbs);
            if (vi < 0) throw DataError("bad verb: " + val);
            g.verb = (Verb)vi;
            saw_verb = true;
        } else if (key == "bg") {
            int bi = find_name(val, background_color_names().data(), kNumBackgroundColors);
            if (bi < 0) throw DataError("bad bg: " + val);
            g.background = bi;
            saw_bg = true;
        } else if (key == "comp") {
            if (val == "none") {
                g.has_companion = false;
            } else {
                g.has_companion = true;
                g.companion = parse_object(val, "comp");
            }
            saw_comp = true;
        } else {
            throw DataError("unknown graph field: " + key);
        }
    }
    if (!(saw_proto && saw_pos && saw_verb && saw_bg && saw_comp))
        throw DataError("incomplete graph text: " + line);
    return g;
}

namespace {

int nearest_color(float r, float g, float b, const RgbF* pal, int n) {
    int best = 0;
    float best_d = 1e30f;
    for (int i = 0; i < n; ++i) {
        const float dr = r - pal[i].r, dg = g - pal[i].g, db = b - pal[i].b;
        const float d = dr * dr + dg * dg + db * db;
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

} // namespace

int nearest_object_color(float r, float g, float b) {
    return nearest_color(r, g, b, object_palette().data(), kNumObjectColors);
}

int nearest_background_color(float r, float g, float b) {
    return nearest_color(r, g, b, background_palette().data(), kNumBackgroundColors);
}

} // namespace vista
