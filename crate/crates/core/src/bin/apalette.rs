fn main() {
    std::process::exit(audio_palette::cli::run(std::env::args_os()));
}
