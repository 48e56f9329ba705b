#pragma once

#include "focusloop/image.hpp"
#include "focusloop/rng.hpp"
#include "focusloop/trajectory.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace testing {

inline focusloop::ImageRef patterned_image(const std::string& id, int w, int h) {
    std::vector<focusloop::Rgb> px;
    px.reserve(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            px.push_back({static_cast<std::uint8_t>(x % 251), static_cast<std::uint8_t>(y % 241),
                          static_cast<std::uint8_t>((3 * x + 7 * y) % 256)});
    return focusloop::ImageRef::from_raster(id, w, h, std::move(px));
}

/// Well-formed step list: (think* (call obs)*)* and maybe a final answer.
inline std::vector<focusloop::StepRecord> random_steps(std::mt19937_64& rng, bool answered) {
    using namespace focusloop;
    std::vector<StepRecord> steps;
    const int blocks = static_cast<int>(uniform_index(rng, 5));
    for (int b = 0; b < blocks; ++b) {
        if (uniform_index(rng, 2)) steps.push_back(StepRecord::think("t" + std::to_string(b) + " look here"));
        const int calls = static_cast<int>(uniform_index(rng, 3));
        for (int c = 0; c < calls; ++c) {
            const int x = static_cast<int>(uniform_index(rng, 50));
            const Region r{x, x, x + 10, x + 20};
            steps.push_back(StepRecord::tool_call(r));
            steps.push_back(StepRecord::observation(ImageRef::descriptor("z", 20, 40),
                                                    static_cast<std::int64_t>(uniform_index(rng, 300)),
                                                    FrameTransform::zoom(r, 2)));
        }
    }
    if (answered) steps.push_back(StepRecord::answer("final"));
    return steps;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("focusloop_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

struct CliResult {
    int exit_code = -1;
    std::string out;
};

/// Runs the CLI with stdout captured; stderr goes to `err_file` when given.
inline CliResult run_cli(const std::string& args, const std::string& err_file = "/dev/null") {
    const std::string cmd = std::string("\"") + FOCUSLOOP_CLI + "\" " + args + " 2>" + err_file;
    CliResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

}  // namespace testing
