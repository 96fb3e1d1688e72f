#pragma once

#include <cstdint>
#include <string>

#include "rsgen/diffusion.hpp"
#include "rsgen/ingest.hpp"
#include "rsgen/lulc.hpp"

namespace rsgen::fixture {

// Captioned record set with class-coloured procedural images, five captions
// per record, classes assigned round-robin.
inline ingest::RecordSet captioned_records(std::size_t n, int side, std::uint64_t seed) {
    ingest::RecordSet rs;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string cls(kLulcClasses[i % kLulcClasses.size()]);
        PromptSpec spec;
        spec.class_name = cls;
        spec.positive = "fixture " + cls;
        spec.seed = derive_seed(seed, i);
        spec.width = spec.height = side;
        ingest::ImageCaptionRecord r;
        r.image = render_procedural(spec);
        r.class_name = cls;
        r.source_id = "fx-" + std::to_string(i);
        for (int k = 0; k < 5; ++k)
            r.captions.push_back("caption " + std::to_string(k) + " of an aerial view of " + cls + " scene " +
                                 std::to_string(i) + ".");
        rs.records.push_back(std::move(r));
    }
    return rs;
}

}  // namespace rsgen::fixture
