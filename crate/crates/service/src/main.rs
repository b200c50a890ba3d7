fn main() {
    std::process::exit(ticketrag_service::cli::run(std::env::args_os()));
}
