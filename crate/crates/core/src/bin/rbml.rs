fn main() {
    std::process::exit(rbml::app::run(std::env::args_os()));
}
