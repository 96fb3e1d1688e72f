#include <CLI11.hpp>
#include <iostream>

#include "fixture.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Write a captioned columnar fixture dataset", "rsgen-fixture"};
    std::string out;
    std::size_t rows = 600;
    int side = 64;
    std::uint64_t seed = 0;
    app.add_option("-o,--out", out, "Output dataset file")->required();
    app.add_option("-n,--rows", rows, "Number of records");
    app.add_option("--side", side, "Image side in pixels");
    app.add_option("--seed", seed, "Seed");
    CLI11_PARSE(app, argc, argv);

    try {
        rsgen::ingest::write_columnar(out, rsgen::fixture::captioned_records(rows, side, seed));
    } catch (const std::exception& e) {
        std::cerr << "rsgen-fixture: " << e.what() << "\n";
        return 1;
    }
    std::cout << "wrote " << rows << " records to " << out << "\n";
    return 0;
}
