//! Symbols per image for each transmission scheme, relative to JPEG + LDPC.

use semcom::channel::{count_overhead, ratio_percent, OverheadScheme};
use semcom::harness::overhead_rows;
use semcom::mae::ModelConfig;

fn main() -> semcom::Result<()> {
    let reference = count_overhead(&OverheadScheme::jpeg_ldpc_reference())?;
    let proposed = count_overhead(&OverheadScheme::full_codebook())?;
    println!("JPEG + LDPC (rate 1/2), 16-QAM : {reference} symbols/image");
    println!("MAE + codebook, 16-QAM         : {proposed} symbols/image");
    println!(
        "ratio                          : {}",
        ratio_percent(proposed, reference)
    );

    println!("\ndesk-scale model:");
    for row in overhead_rows(&ModelConfig::desk())? {
        println!(
            "  {:<20} {:>6}  {}",
            row.scheme, row.symbols_per_image, row.ratio_to_reference
        );
    }
    Ok(())
}
