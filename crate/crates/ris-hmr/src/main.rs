//! Binary entry point; all logic lives in the library.

fn main() {
    if let Err(e) = ris_hmr::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
