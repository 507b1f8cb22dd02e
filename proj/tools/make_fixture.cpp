// Regenerates the bundled fixture corpora.
#include "support.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    namespace fs = std::filesystem;
    const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("data/fixtures");
    try {
        fs::create_directories(out);
        xfl::save_corpus(xfl::testing::make_fixture_corpus(), out / "fixture200.jsonl");
        auto unseen = xfl::testing::make_unseen_fixture();
        xfl::save_corpus(unseen.train, out / "unseen_train.jsonl");
        xfl::save_corpus(unseen.valid, out / "unseen_valid.jsonl");
        xfl::save_corpus(unseen.test, out / "unseen_test.jsonl");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    std::cout << "fixtures written to " << out.string() << '\n';
    return 0;
}
