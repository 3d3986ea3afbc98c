fn main() {
    std::process::exit(medmeta::run(std::env::args_os()));
}
